#pragma once

#include <cstdint>

namespace voxbox {

/// Byte counter with a high-water mark. Meters are thread-local, so each
/// thread observes only its own allocations.
class MemoryMeter {
public:
    void allocate(std::int64_t bytes) noexcept;
    void release(std::int64_t bytes) noexcept;

    /// Rebases the high-water mark onto the current live count.
    void reset_peak() noexcept { peak_bytes_ = live_bytes_; }

    std::int64_t live_bytes() const noexcept { return live_bytes_; }
    std::int64_t peak_bytes() const noexcept { return peak_bytes_; }
    std::int64_t allocations() const noexcept { return allocations_; }

private:
    std::int64_t live_bytes_ = 0;
    std::int64_t peak_bytes_ = 0;
    std::int64_t allocations_ = 0;
};

/// Tensor value buffers.
MemoryMeter& data_meter() noexcept;
/// Gradient buffers attached to leaves.
MemoryMeter& grad_meter() noexcept;

} // namespace voxbox
