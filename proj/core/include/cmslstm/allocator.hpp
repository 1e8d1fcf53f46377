#pragma once

namespace cmslstm {

/// Keeps freed activation buffers inside the process heap instead of
/// returning them to the OS. Graph tensors (often 128 KiB+) otherwise hit
/// mmap/munmap and fresh page faults on every allocation. No-op off glibc.
void tune_allocator();

}  // namespace cmslstm
