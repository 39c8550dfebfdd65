#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "linearsr/rng.hpp"
#include "linearsr/snrmoe.hpp"

using namespace linearsr;

namespace {
LogSnrSchedule default_schedule() { return LogSnrSchedule::from_sigma(0.0118, 33.78); }
} // namespace

TEST_CASE("log-SNR closed form and midpoints", "[snrmoe]") {
    // lambda(1/2) = 0, lambda(1/(e+1)) = 2
    CHECK(log_snr(0.5) == 0.0);
    CHECK(log_snr(1.0 / (std::exp(1.0) + 1.0)) == Catch::Approx(2.0).epsilon(1e-12));
    CHECK(log_snr(0.25) == Catch::Approx(2.0 * std::log(3.0)).epsilon(1e-12));
    CHECK_THROWS_AS(log_snr(0.0), DomainError);
    CHECK_THROWS_AS(log_snr(1.0), DomainError);
    CHECK(std::isinf(log_snr(0.0, true)));
}

TEST_CASE("log-SNR and its inverse round trip", "[snrmoe]") {
    for (int i = 1; i < 10000; ++i) {
        const double t = i / 10000.0;
        CHECK(std::abs(inv_log_snr(log_snr(t)) - t) < 1e-12);
    }
}

TEST_CASE("log-SNR is strictly decreasing in t", "[snrmoe]") {
    double prev = log_snr(1e-4);
    for (int i = 2; i < 1000; ++i) {
        const double cur = log_snr(i * 1e-3);
        REQUIRE(cur < prev);
        prev = cur;
    }
}

TEST_CASE("effective sigma range maps to the documented lambda range", "[snrmoe]") {
    auto [lmin, lmax] = effective_range(0.0118, 33.78);
    CHECK(lmin == Catch::Approx(-7.04).margin(0.01));
    CHECK(lmax == Catch::Approx(8.87).margin(0.01));
    CHECK_THROWS_AS(effective_range(2.0, 1.0), DomainError);
    CHECK_THROWS_AS(effective_range(0.0, 1.0), DomainError);
}

TEST_CASE("depth-2 partition reproduces the published four-expert table", "[snrmoe]") {
    ExpertPartition p = derive_partition(default_schedule(), 0.875, 2);
    REQUIRE(p.num_experts == 4);
    REQUIRE(p.lambda_boundaries.size() == 3);

    // lambda values to +-0.01
    CHECK(p.lambda_min == Catch::Approx(-7.04).margin(0.01));
    CHECK(p.lambda_boundaries[0] == Catch::Approx(-5.47).margin(0.01));
    CHECK(p.lambda_boundaries[1] == Catch::Approx(-3.89).margin(0.01));
    CHECK(p.lambda_boundaries[2] == Catch::Approx(2.49).margin(0.01));
    CHECK(p.lambda_max == Catch::Approx(8.87).margin(0.01));

    // t boundaries to +-0.001
    CHECK(p.t_boundaries[0] == Catch::Approx(0.939).margin(0.001));
    CHECK(p.t_boundaries[1] == Catch::Approx(0.875).margin(0.001));
    CHECK(p.t_boundaries[2] == Catch::Approx(0.223).margin(0.001));

    CHECK(expert_task_label(p, 0) == "Initial Denoising");
    CHECK(expert_task_label(p, 1) == "Coarse Structure");
    CHECK(expert_task_label(p, 2) == "Texture Generation");
    CHECK(expert_task_label(p, 3) == "Detail Refinement");
}

TEST_CASE("interior boundaries obey the lambda midpoint law", "[snrmoe]") {
    ExpertPartition p = derive_partition(default_schedule(), 0.875, 2);
    const double anchor = log_snr(0.875);
    CHECK(std::abs(p.lambda_boundaries[0] - 0.5 * (p.lambda_min + anchor)) < 1e-12);
    CHECK(std::abs(p.lambda_boundaries[1] - anchor) < 1e-12);
    CHECK(std::abs(p.lambda_boundaries[2] - 0.5 * (anchor + p.lambda_max)) < 1e-12);
}

TEST_CASE("depth-1 partition splits exactly at the anchor", "[snrmoe]") {
    ExpertPartition p = derive_partition(default_schedule(), 0.875, 1);
    REQUIRE(p.num_experts == 2);
    REQUIRE(p.t_boundaries.size() == 1);
    CHECK(p.t_boundaries[0] == Catch::Approx(0.875).epsilon(1e-12));
    CHECK(expert_task_label(p, 0) == "High-Noise Zone");
    CHECK(expert_task_label(p, 1) == "Low-Noise Zone");
}

TEST_CASE("symmetric schedule with central anchor gives symmetric boundaries", "[snrmoe]") {
    // sigma range (1/s, s) gives lambda range (-2 ln s, 2 ln s); anchor t=0.5
    // has lambda 0, so boundaries must be symmetric about 0.
    auto sched = LogSnrSchedule::from_sigma(0.1, 10.0);
    ExpertPartition p = derive_partition(sched, 0.5, 2);
    CHECK(std::abs(p.lambda_boundaries[1]) < 1e-12);
    CHECK(std::abs(p.lambda_boundaries[0] + p.lambda_boundaries[2]) < 1e-12);
    CHECK(std::abs(p.t_boundaries[0] + p.t_boundaries[2] - 1.0) < 1e-12);
}

TEST_CASE("routing is total and tiles [0,1]", "[snrmoe]") {
    ExpertPartition p = derive_partition(default_schedule(), 0.875, 2);
    Rng rng(1);
    std::vector<std::size_t> hits(4, 0);
    for (int i = 0; i < 20000; ++i) {
        const double t = rng.uniform();
        RouteDecision d = route(t, p);
        REQUIRE(d.expert_index < 4);
        auto [lo, hi] = p.expert_t_range(d.expert_index);
        REQUIRE(t >= lo);
        REQUIRE(t <= hi);
        ++hits[d.expert_index];
    }
    CHECK(route(0.0, p).expert_index == 3);
    CHECK(route(1.0, p).expert_index == 0);
    for (auto h : hits) CHECK(h > 0);
}

TEST_CASE("a boundary t is owned by the noisier expert", "[snrmoe]") {
    ExpertPartition p = derive_partition(default_schedule(), 0.875, 2);
    // 0.875 is the boundary between experts 1 and 2 and must land on expert 1.
    CHECK(route(0.875, p).expert_index == 1);
    CHECK(route(p.t_boundaries[0], p).expert_index == 0);
    CHECK(route(p.t_boundaries[2], p).expert_index == 2);
    CHECK(route(0.875 - 1e-9, p).expert_index == 2);
}

TEST_CASE("flow-time routing flips the time axis", "[snrmoe]") {
    ExpertPartition p = derive_partition(default_schedule(), 0.875, 2);
    for (double t : {0.0, 0.1, 0.5, 0.875, 0.99, 1.0})
        CHECK(route_flow_time(t, p).expert_index == route(1.0 - t, p).expert_index);
    // flow time 0 is the prior = noisiest expert
    CHECK(route_flow_time(0.0, p).expert_index == 0);
    CHECK(route_flow_time(1.0, p).expert_index == 3);
}

TEST_CASE("invalid partition requests are rejected", "[snrmoe]") {
    auto sched = default_schedule();
    CHECK_THROWS_AS(derive_partition(sched, 0.875, 0), DomainError);
    CHECK_THROWS_AS(derive_partition(sched, 0.0, 2), DomainError);
    // anchor so extreme its lambda leaves the effective range
    CHECK_THROWS_AS(derive_partition(sched, 1e-9, 2), DomainError);
    ExpertPartition p = derive_partition(sched, 0.875, 2);
    CHECK_THROWS_AS(route(-0.1, p), DomainError);
    CHECK_THROWS_AS(route(1.1, p), DomainError);
}

TEST_CASE("routing table JSON round trips the boundaries", "[snrmoe]") {
    ExpertPartition p = derive_partition(default_schedule(), 0.875, 2);
    auto j = nlohmann::json::parse(emit_routing_table(p, "json"));
    CHECK(j["num_experts"] == 4);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(j["t_boundaries"][i].get<double>() == p.t_boundaries[i]);
        CHECK(j["lambda_boundaries"][i].get<double>() == p.lambda_boundaries[i]);
    }
    std::string csv = emit_routing_table(p, "csv");
    CHECK(csv.find("expert,task,lambda_lo,lambda_hi,t_lo,t_hi") == 0);
    CHECK(csv.find("Texture Generation") != std::string::npos);
    CHECK_THROWS_AS(emit_routing_table(p, "xml"), DomainError);
}
