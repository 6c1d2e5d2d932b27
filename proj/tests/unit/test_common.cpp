#include <catch2/catch_amalgamated.hpp>

#include "ecg2cxr/common.hpp"
#include "ecg2cxr/csv.hpp"
#include "ecg2cxr/rng.hpp"

#include <filesystem>
#include <fstream>

using namespace ecg2cxr;

TEST_CASE("fmt_g17 round-trips doubles exactly") {
    Rng rng(7);
    for (int i = 0; i < 1000; ++i) {
        const double v = (rng.uniform() - 0.5) * std::pow(10.0, rng.uniform(-12.0, 12.0));
        const auto s = fmt_g17(v);
        REQUIRE(*parse_double(s) == v);
    }
    REQUIRE(fmt_g17(0.5) == "0.5");
}

TEST_CASE("parse_double rejects junk and empties") {
    REQUIRE(!parse_double(""));
    REQUIRE(!parse_double("   "));
    REQUIRE(!parse_double("12a"));
    REQUIRE(!parse_double("nan"));
    REQUIRE(*parse_double(" 740 ") == 740.0);
    REQUIRE(*parse_double("-4.5") == -4.5);
}

TEST_CASE("timestamp parsing and formatting") {
    const auto t = parse_timestamp_utc("2024-03-10 14:03:22");
    REQUIRE(t);
    REQUIRE(format_timestamp_utc(*t) == "2024-03-10 14:03:22");
    REQUIRE(parse_timestamp_utc("2024-03-10T14:03:22Z") == t);
    REQUIRE(*parse_timestamp_utc("1970-01-01 00:00:00") == 0);
    REQUIRE(*parse_timestamp_utc("1970-01-02 00:00:01") == 86401);
    REQUIRE(!parse_timestamp_utc("2024-03-10"));
    REQUIRE(!parse_timestamp_utc("not a time"));
    REQUIRE(!parse_timestamp_utc("2024-13-10 00:00:00"));
}

TEST_CASE("csv round trip with quoting") {
    const auto path = std::filesystem::temp_directory_path() / "ecg2cxr_csv_test.csv";
    write_csv(path, {"a", "b"}, {{"plain", "with,comma"}, {"with\"quote", "x"}});
    const auto table = read_csv(path);
    REQUIRE(table.header == std::vector<std::string>{"a", "b"});
    REQUIRE(table.rows.size() == 2);
    REQUIRE(table.rows[0][1] == "with,comma");
    REQUIRE(table.rows[1][0] == "with\"quote");
    std::filesystem::remove(path);
}

TEST_CASE("csv read errors") {
    REQUIRE_THROWS_AS(read_csv("/nonexistent/file.csv"), DataError);
}

TEST_CASE("rng streams are deterministic and decorrelated") {
    Rng a = Rng::stream(42, 0);
    Rng b = Rng::stream(42, 0);
    Rng c = Rng::stream(42, 1);
    REQUIRE(a.next_u64() == b.next_u64());
    REQUIRE(a.next_u64() == b.next_u64());
    REQUIRE(Rng::stream(42, 0).next_u64() != c.next_u64());

    Rng r(1);
    double mean = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) mean += r.normal();
    mean /= n;
    REQUIRE(std::fabs(mean) < 0.05);
}
