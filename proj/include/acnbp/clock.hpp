#pragma once

#include <cstdint>
#include <memory>

namespace acnbp {

// Discrete virtual clock shared by the simulator, registry, and agents.
// Never wall time: every deadline and replay-window test advances it
// explicitly.
class VirtualClock {
public:
    std::int64_t now_ms() const { return now_; }
    void advance_to(std::int64_t t) {
        if (t > now_) now_ = t;
    }
    void advance_by(std::int64_t dt) { now_ += dt; }

private:
    std::int64_t now_ = 0;
};

using ClockHandle = std::shared_ptr<VirtualClock>;

inline ClockHandle make_clock() { return std::make_shared<VirtualClock>(); }

}  // namespace acnbp
