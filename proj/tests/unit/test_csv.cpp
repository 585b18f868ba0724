#include <cstring>
#include <sstream>

#include "doctest.h"

#include "flatlab/csv.hpp"
#include "flatlab/error.hpp"
#include "flatlab/rng.hpp"

using namespace flatlab;

TEST_SUITE("csv") {

TEST_CASE("writer emits schema and header") {
    std::ostringstream out;
    CsvWriter w(out, {"name", "x", "n", "ok"});
    w.row(std::string("a"), 0.1, std::size_t{3}, true);
    CHECK(out.str() == "#schema: name,x,n,ok\nname,x,n,ok\na,0.10000000000000001,3,1\n");
    CHECK_THROWS_AS(w.row(1.0), Error);
}

TEST_CASE("17 significant digits round trip") {
    Rng rng(1);
    for (int i = 0; i < 1000; ++i) {
        const double v = rng.normal() * std::pow(10.0, rng.uniform(-300, 300));
        const double back = std::stod(format_real(v));
        CHECK(std::memcmp(&v, &back, sizeof v) == 0);
    }
}

TEST_CASE("read_csv skips comments and finds columns") {
    std::istringstream in("#schema: a,b\na,b\n1,2\n# note\n3,\n");
    const auto t = read_csv(in);
    CHECK(t.columns == std::vector<std::string>{"a", "b"});
    REQUIRE(t.rows.size() == 2);
    CHECK(t.rows[1] == std::vector<std::string>{"3", ""});
    CHECK(t.column_index("b") == 1);
    CHECK_THROWS_AS((void)t.column_index("c"), Error);
    std::istringstream empty("#only\n");
    CHECK_THROWS_AS((void)read_csv(empty), Error);
}

}  // TEST_SUITE
