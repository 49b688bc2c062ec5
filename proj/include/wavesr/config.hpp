#pragma once

// Model hyperparameters shared by the windowing schedule, the network
// assembly, and checkpoint serialization.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace wavesr {

struct ModelConfig {
    std::int64_t num_blocks = 4;
    std::int64_t layers_per_block = 6;
    std::int64_t channels = 60;
    std::int64_t heads = 6;
    std::int64_t base_window = 8;
    std::vector<std::int64_t> window_schedule = {8, 8, 16, 16, 32, 32};
    std::int64_t upscale = 2;
    std::int64_t ffn_expansion = 2;
    bool alternate_channel_attention = true;  // odd layers use channel self-correlation

    void validate() const {
        auto fail = [](const std::string& msg) { throw std::invalid_argument("ModelConfig: " + msg); };
        if (num_blocks < 1) fail("num_blocks must be >= 1");
        if (layers_per_block < 1) fail("layers_per_block must be >= 1");
        if (channels < 2 || channels % 2 != 0) fail("channels must be even and >= 2");
        if (heads < 1) fail("heads must be >= 1");
        if ((channels / 2) % heads != 0)
            fail("channels/2 = " + std::to_string(channels / 2) + " not divisible by " +
                 std::to_string(heads) + " heads");
        if (base_window < 2 || base_window % 2 != 0) fail("base_window must be even and >= 2");
        if (upscale < 2 || upscale > 4) fail("upscale must be 2, 3, or 4");
        if (ffn_expansion < 1) fail("ffn_expansion must be >= 1");
        if (static_cast<std::int64_t>(window_schedule.size()) != layers_per_block)
            fail("window_schedule has " + std::to_string(window_schedule.size()) +
                 " entries for " + std::to_string(layers_per_block) + " layers");
        for (auto w : window_schedule) {
            if (w < 2 || w % 2 != 0) fail("window sizes must be even and >= 2");
            if (w > base_window) {
                std::int64_t m = w;
                while (m > base_window && m % 2 == 0) m /= 2;
                if (m != base_window)
                    fail("window " + std::to_string(w) + " above base " +
                         std::to_string(base_window) + " must be base*2^j");
            }
        }
    }
};

}  // namespace wavesr
