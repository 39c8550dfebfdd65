#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "linearsr/trace.hpp"

using namespace linearsr;

TEST_CASE("trace CSV round trips values and NaN markers", "[trace]") {
    MetricTrace loss;
    loss.name = "train_loss";
    loss.orientation = MetricOrientation::LowerBetter;
    loss.append(10, 1.5);
    loss.append(20, 0.75);
    loss.append(30, std::nan(""));

    MetricTrace psnr;
    psnr.name = "psnr";
    psnr.append(10, 22.125);
    psnr.append(20, 24.0);

    std::ostringstream os;
    write_trace_csv(os, {loss, psnr});
    const std::string text = os.str();
    CHECK(text.rfind("iteration,metric_name,value\n", 0) == 0);
    CHECK(text.find("30,train_loss,nan") != std::string::npos);

    std::istringstream is(text);
    auto back = read_trace_csv(is);
    REQUIRE(back.size() == 2);
    const MetricTrace& l2 = back[0].name == "train_loss" ? back[0] : back[1];
    const MetricTrace& p2 = back[0].name == "psnr" ? back[0] : back[1];
    CHECK(l2.orientation == MetricOrientation::LowerBetter);
    CHECK(p2.orientation == MetricOrientation::HigherBetter);
    REQUIRE(l2.points.size() == 3);
    CHECK(l2.points[1].second == 0.75);
    CHECK(std::isnan(l2.points[2].second));
    CHECK(l2.has_divergence_marker());
    CHECK_FALSE(p2.has_divergence_marker());
    CHECK(p2.points[0].second == 22.125);
}

TEST_CASE("rows are merged chronologically across metrics", "[trace]") {
    MetricTrace a, b;
    a.name = "a";
    b.name = "b";
    a.append(1, 1.0);
    a.append(3, 3.0);
    b.append(2, 2.0);
    std::ostringstream os;
    write_trace_csv(os, {a, b});
    const std::string text = os.str();
    CHECK(text.find("1,a,") < text.find("2,b,"));
    CHECK(text.find("2,b,") < text.find("3,a,"));
}

TEST_CASE("iterations must be strictly increasing", "[trace]") {
    MetricTrace t;
    t.name = "m";
    t.append(5, 1.0);
    CHECK_THROWS_AS(t.append(5, 2.0), DomainError);
    CHECK_THROWS_AS(t.append(4, 2.0), DomainError);
}

TEST_CASE("malformed CSV input is rejected", "[trace]") {
    std::istringstream empty("");
    CHECK_THROWS_AS(read_trace_csv(empty), FormatError);
    std::istringstream bad_header("step,name,value\n1,a,2\n");
    CHECK_THROWS_AS(read_trace_csv(bad_header), FormatError);
    std::istringstream bad_row("iteration,metric_name,value\n1,a\n");
    CHECK_THROWS_AS(read_trace_csv(bad_row), FormatError);
    CHECK_THROWS_AS(read_trace_csv("/nonexistent/path.csv"), FormatError);
}

TEST_CASE("full precision survives the round trip", "[trace]") {
    MetricTrace t;
    t.name = "m";
    const double v = 0.12345678901234567;
    t.append(1, v);
    std::ostringstream os;
    write_trace_csv(os, {t});
    std::istringstream is(os.str());
    CHECK(read_trace_csv(is)[0].points[0].second == v);
}
