#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "wavesr/complexity.hpp"

using namespace wavesr;

namespace {

WindowLayout square_layout(std::int64_t window, std::int64_t base) {
    WindowLayout l;
    l.window_h = l.window_w = window;
    l.base_h = l.base_w = base;
    l.alpha = static_cast<double>(window) / static_cast<double>(base);
    l.dwt_levels = 0;
    for (std::int64_t m = window; m > base; m /= 2) ++l.dwt_levels;
    return l;
}

}  // namespace

TEST_CASE("analytic costs reproduce the headline numbers", "[complexity]") {
    REQUIRE(analytic_w_sa(1, 60, 8, 8) == 491520ull);
    REQUIRE(analytic_wa_sc(1, 10, 8, 8) == 320ull);
    REQUIRE(analytic_w_sa(1, 60, 8, 8) / analytic_wa_sc(1, 10, 8, 8) == 1536ull);

    REQUIRE(analytic_w_sa(0, 60, 8, 8) == 0ull);
    REQUIRE(analytic_wa_sc(0, 10, 8, 8) == 0ull);
}

TEST_CASE("analytic costs follow the expected growth laws", "[complexity]") {
    // Doubling both window axes multiplies the dense cost by 16 and the
    // correlation cost by 4; doubling the window count doubles both.
    REQUIRE(analytic_w_sa(1, 60, 16, 16) == 16 * analytic_w_sa(1, 60, 8, 8));
    REQUIRE(analytic_wa_sc(1, 10, 16, 16) == 4 * analytic_wa_sc(1, 10, 8, 8));
    REQUIRE(analytic_w_sa(2, 60, 8, 8) == 2 * analytic_w_sa(1, 60, 8, 8));
    REQUIRE(analytic_wa_sc(2, 10, 8, 8) == 2 * analytic_wa_sc(1, 10, 8, 8));
}

TEST_CASE("dense baseline counter matches its analytic formula exactly", "[complexity]") {
    NoGradGuard ng;
    Rng rng(1);
    for (auto [side, c, heads] : std::vector<std::array<std::int64_t, 3>>{
             {8, 60, 6}, {4, 8, 2}, {8, 16, 1}}) {
        Tensor tokens = rand_uniform({side * side, c}, rng, -1.0, 1.0);
        OpCounter::instance().reset();
        Tensor out = reference_w_sa(tokens, heads);
        REQUIRE(out.shape() == tokens.shape());
        REQUIRE(OpCounter::instance().mult_adds() ==
                analytic_w_sa(1, static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(side),
                              static_cast<std::uint64_t>(side)));
    }
}

TEST_CASE("dense baseline trace exposes its softmax, correlation path does not",
          "[complexity]") {
    NoGradGuard ng;
    Rng rng(2);
    Tensor tokens = rand_uniform({16, 8}, rng, -1.0, 1.0);
    OpCounter::instance().reset();
    reference_w_sa(tokens, 2);
    REQUIRE(OpCounter::instance().op_count("softmax") > 0);
    REQUIRE(OpCounter::instance().op_count("exp") > 0);

    WindowLayout layout = square_layout(4, 4);
    WaScParams p = make_wa_sc_params(8, 2, layout, rng);
    Tensor q = rand_uniform({16, 8}, rng, -1.0, 1.0);
    Tensor v = rand_uniform({16, 8}, rng, -1.0, 1.0);
    OpCounter::instance().reset();
    wa_sc(q, v, layout, p);
    c_sc(q, v);
    REQUIRE(OpCounter::instance().op_count("softmax") == 0);
    REQUIRE(OpCounter::instance().op_count("exp") == 0);
}

TEST_CASE("instrumented attention counters match their closed forms exactly", "[complexity]") {
    NoGradGuard ng;
    Rng rng(3);
    const std::int64_t width = 30, heads = 6;
    for (std::int64_t window : {8, 16, 32}) {
        WindowLayout layout = square_layout(window, 8);
        WaScParams p = make_wa_sc_params(width, heads, layout, rng);
        Tensor q = rand_uniform({layout.tokens(), width}, rng, -1.0, 1.0);
        Tensor v = rand_uniform({layout.tokens(), width}, rng, -1.0, 1.0);

        OpCounter::instance().reset();
        wa_sc(q, v, layout, p);
        REQUIRE(OpCounter::instance().mult_adds() == predicted_wa_sc_mult_adds(width, layout));

        OpCounter::instance().reset();
        c_sc(q, v);
        REQUIRE(OpCounter::instance().mult_adds() ==
                predicted_c_sc_mult_adds(width, layout.tokens()));
    }
}

TEST_CASE("scaling probes grow linearly for correlation, quadratically for dense",
          "[complexity]") {
    CostReport report = scaling_experiment(ModelConfig{}, {8, 16, 32});
    REQUIRE(report.probes.size() == 3);

    for (const auto& probe : report.probes) {
        WindowLayout layout = square_layout(probe.window, 8);
        REQUIRE(probe.area == static_cast<std::uint64_t>(probe.window * probe.window));
        REQUIRE(probe.measured_wasc == predicted_wa_sc_mult_adds(30, layout));
        REQUIRE(probe.measured_wsa ==
                analytic_w_sa(1, 60, static_cast<std::uint64_t>(probe.window),
                              static_cast<std::uint64_t>(probe.window)));
        REQUIRE(probe.analytic_wsa == probe.measured_wsa);
        REQUIRE(probe.analytic_wasc ==
                analytic_wa_sc(1, 10, static_cast<std::uint64_t>(probe.window),
                               static_cast<std::uint64_t>(probe.window)));
        REQUIRE(probe.seconds_wasc >= 0.0);
        REQUIRE(probe.seconds_wsa >= 0.0);
    }

    REQUIRE(report.slope_wasc > 0.9);
    REQUIRE(report.slope_wasc < 1.1);
    REQUIRE(report.slope_wsa > 1.9);
    REQUIRE(report.slope_wsa < 2.1);
    REQUIRE(report.residual_wsa < 1e-9);  // the dense law is exact in the log domain
}

TEST_CASE("scaling probes are deterministic in counts", "[complexity]") {
    CostReport a = scaling_experiment(ModelConfig{}, {8, 16});
    CostReport b = scaling_experiment(ModelConfig{}, {8, 16});
    REQUIRE(a.probes.size() == b.probes.size());
    for (std::size_t i = 0; i < a.probes.size(); ++i) {
        REQUIRE(a.probes[i].measured_wasc == b.probes[i].measured_wasc);
        REQUIRE(a.probes[i].measured_wsa == b.probes[i].measured_wsa);
    }
}

TEST_CASE("scaling experiment validates its probe sizes", "[complexity]") {
    REQUIRE_THROWS_AS(scaling_experiment(ModelConfig{}, {}), std::invalid_argument);
    REQUIRE_THROWS_AS(scaling_experiment(ModelConfig{}, {8, 12}), std::invalid_argument);
    REQUIRE_THROWS_AS(scaling_experiment(ModelConfig{}, {4}), std::invalid_argument);
}

TEST_CASE("cost report serializes to the expected CSV layout", "[complexity]") {
    CostReport report = scaling_experiment(ModelConfig{}, {8, 16});
    std::ostringstream os;
    write_cost_csv(report, os);

    std::istringstream is(os.str());
    std::string line;
    REQUIRE(std::getline(is, line));
    REQUIRE(line ==
            "window,area,analytic_wsa,analytic_wasc,measured_wasc,measured_wsa,"
            "seconds_wasc,seconds_wsa");
    std::size_t rows = 0;
    while (std::getline(is, line)) {
        ++rows;
        REQUIRE(std::count(line.begin(), line.end(), ',') == 7);
    }
    REQUIRE(rows == report.probes.size());
}
