#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <set>

#include "scorelab/config.hpp"
#include "scorelab/rng.hpp"

using namespace scorelab;

TEST_CASE("default config carries the full schema and validates") {
    auto j = default_config("spectrum");
    CHECK(j.at("kind") == "spectrum");
    for (const char* key : {"seed", "out", "mixture", "sizes", "t", "chi_p", "chi_m",
                            "training", "solver", "windows", "speciation", "memgap",
                            "sample"})
        CHECK(j.contains(key));
    CHECK(validate_config(j).empty());
}

TEST_CASE("config JSON round trip is lossless") {
    auto j = default_config("train");
    j["seed"] = 42;
    const std::string path = "/tmp/scorelab_test_config.json";
    save_json(j, path);
    auto back = load_config(path);
    CHECK(back == j);
    std::remove(path.c_str());
    CHECK_THROWS(load_config("/tmp/does-not-exist-scorelab.json"));
}

TEST_CASE("dotted-path overrides parse JSON and fall back to strings") {
    auto j = default_config("spectrum");
    apply_override(j, "sizes.n=250");
    CHECK(j.at("sizes").at("n").get<int>() == 250);
    apply_override(j, "t=0.005");
    CHECK(j.at("t").get<double>() == doctest::Approx(0.005));
    apply_override(j, "mixture.weights=[0.3,0.7]");
    CHECK(as_vector(j.at("mixture").at("weights")) == std::vector<double>{0.3, 0.7});
    apply_override(j, "out=run-42");
    CHECK(j.at("out").get<std::string>() == "run-42"); // not valid JSON -> raw string
    apply_override(j, "speciation.a=null");
    CHECK(j.at("speciation").at("a").is_null());
    CHECK_THROWS(apply_override(j, "no-equals-sign"));
    CHECK_THROWS(apply_override(j, "a..b=1"));
}

TEST_CASE("validation reports every violation, not just the first") {
    auto j = default_config("spectrum");
    j["kind"] = "bogus";
    j["sizes"]["n"] = 0;
    j["t"] = -1.0;
    j["chi_p"] = -2.0;
    auto errs = validate_config(j);
    CHECK(errs.size() >= 4);
    j = default_config("spectrum");
    j["mixture"]["weights"] = {0.5, 0.6}; // does not sum to one
    errs = validate_config(j);
    REQUIRE(errs.size() == 1);
    CHECK(errs[0].find("mixture") != std::string::npos);
}

TEST_CASE("mixture and grid construction from config") {
    auto j = default_config("spectrum");
    auto spec = mixture_from_config(j, 50);
    CHECK(spec.dim == 50);
    CHECK(spec.n_classes == 2);
    CHECK(spec.weights(0) == doctest::Approx(0.5));
    CHECK(spec.variances(1) == doctest::Approx(0.25));
    auto taus = grid_from_config(j.at("training").at("taus"));
    CHECK(taus.size() == 200);
    CHECK(taus.front() == doctest::Approx(1e-3));
    CHECK(taus.back() == doctest::Approx(1e6));
}

TEST_CASE("checkpoint marks persist across instances") {
    const std::string path = "/tmp/scorelab_test_ck/run.checkpoint";
    std::filesystem::remove_all("/tmp/scorelab_test_ck");
    {
        Checkpoint ck(path);
        CHECK(!ck.contains("cell-a"));
        ck.mark("cell-a");
        ck.mark("cell-b");
        CHECK(ck.contains("cell-a"));
    }
    {
        Checkpoint ck(path);
        CHECK(ck.contains("cell-a"));
        CHECK(ck.contains("cell-b"));
        CHECK(!ck.contains("cell-c"));
    }
    std::filesystem::remove_all("/tmp/scorelab_test_ck");
}

TEST_CASE("manifest is written as readable JSON") {
    const std::string dir = "/tmp/scorelab_test_manifest";
    std::filesystem::remove_all(dir);
    auto cfg = default_config("spectrum");
    write_manifest(dir, cfg, 1.5, {"spectrum.csv"}, {"note"});
    auto m = load_config(dir + "/manifest.json");
    CHECK(m.at("schema") == "scorelab-manifest-v1");
    CHECK(m.at("wall_seconds").get<double>() == doctest::Approx(1.5));
    CHECK(m.at("outputs").at(0) == "spectrum.csv");
    CHECK(m.at("config") == cfg);
    std::filesystem::remove_all(dir);
}

TEST_CASE("child seeds are deterministic and collision-free on a small scan") {
    CHECK(child_seed(1, 2, "x") == child_seed(1, 2, "x"));
    CHECK(child_seed(1, 2, "x") != child_seed(1, 3, "x"));
    CHECK(child_seed(1, 2, "x") != child_seed(2, 2, "x"));
    CHECK(child_seed(1, 2, "x") != child_seed(1, 2, "y"));
    std::set<std::uint64_t> seen;
    for (std::uint64_t s = 0; s < 8; ++s)
        for (std::uint64_t i = 0; i < 32; ++i)
            for (const char* tag : {"w", "data", "noise", "centroids"})
                seen.insert(child_seed(s, i, tag));
    CHECK(seen.size() == 8 * 32 * 4);
}
