#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>

#include "helpers.hpp"
#include "llmmesh.h"

namespace {

// A small but complete experiment: 4 functions, one 7b-class model template,
// one CPU and one GPU node.
std::string write_experiment(const std::filesystem::path& dir) {
    testutil::make_trace_csv(dir / "trace.csv", 4, 30.0, 0.4, 11);
    testutil::make_random_lengths_csv(dir / "lengths.csv", 50, 64, 512, 8, 64, 12);
    std::string cfg = R"({
      "seed": 5,
      "cluster": {"nodes": [
        {"class": "cpu", "count": 1, "mem_gb": 128.0},
        {"class": "gpu", "count": 1, "mem_gb": 80.0}
      ]},
      "models": {"templates": [
        {"name": "7b", "size_class": "7b", "param_gb": 14.0, "kv_kib_per_token": 512}
      ]},
      "workload": {"trace": ")" + (dir / "trace.csv").string() + R"(",
                   "lengths": ")" + (dir / "lengths.csv").string() + R"(",
                   "window_s": 30.0, "sample_functions": 4}
    })";
    return testutil::write_file(dir / "config.json", cfg);
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("the C API runs an experiment and exposes metrics") {
    auto dir = testutil::temp_dir();
    std::string cfg = write_experiment(dir);

    llm_experiment* exp = nullptr;
    REQUIRE(llm_experiment_open(cfg.c_str(), &exp) == LLM_OK);
    REQUIRE(llm_experiment_set_seed(exp, 5) == LLM_OK);
    REQUIRE(llm_experiment_set_output_dir(exp, (dir / "out").string().c_str()) == LLM_OK);
    REQUIRE(llm_experiment_run(exp) == LLM_OK);

    double total = 0.0, compliant = 0.0, rate = 0.0;
    CHECK(llm_experiment_metric(exp, "total_requests", &total) == LLM_OK);
    CHECK(llm_experiment_metric(exp, "slo_compliant", &compliant) == LLM_OK);
    CHECK(llm_experiment_metric(exp, "slo_compliant_rate", &rate) == LLM_OK);
    CHECK(total > 0.0);
    CHECK(compliant > 0.0);
    CHECK(rate > 0.0);
    CHECK(llm_experiment_metric(exp, "no_such_metric", &total) == LLM_ERR_ARG);

    for (const char* name : {"summary.json", "requests.csv", "ttft_cdf.csv",
                             "effective_config.json"}) {
        CHECK(std::filesystem::exists(dir / "out" / name));
    }
    llm_experiment_close(exp);
}

TEST_CASE("config overrides flow through the C API") {
    auto dir = testutil::temp_dir();
    std::string cfg = write_experiment(dir);

    llm_experiment* exp = nullptr;
    REQUIRE(llm_experiment_open(cfg.c_str(), &exp) == LLM_OK);
    REQUIRE(llm_experiment_set(exp, "policy.kind", "exclusive") == LLM_OK);
    REQUIRE(llm_experiment_set_output_dir(exp, (dir / "out2").string().c_str()) == LLM_OK);
    REQUIRE(llm_experiment_run(exp) == LLM_OK);
    std::string eff = slurp(dir / "out2" / "effective_config.json");
    CHECK(eff.find("\"kind\": \"exclusive\"") != std::string::npos);
    llm_experiment_close(exp);
}

TEST_CASE("compare writes per-policy outputs and namespaced metrics") {
    auto dir = testutil::temp_dir();
    std::string cfg = write_experiment(dir);

    llm_experiment* exp = nullptr;
    REQUIRE(llm_experiment_open(cfg.c_str(), &exp) == LLM_OK);
    REQUIRE(llm_experiment_set_output_dir(exp, (dir / "cmp").string().c_str()) == LLM_OK);
    REQUIRE(llm_experiment_compare(exp, "mesh,exclusive,exclusive_cpu") == LLM_OK);

    double mesh = 0.0, excl = 0.0;
    CHECK(llm_experiment_metric(exp, "mesh.slo_compliant", &mesh) == LLM_OK);
    CHECK(llm_experiment_metric(exp, "exclusive.slo_compliant", &excl) == LLM_OK);
    CHECK(std::filesystem::exists(dir / "cmp" / "comparison.json"));
    for (const char* p : {"mesh", "exclusive", "exclusive_cpu"}) {
        CHECK(std::filesystem::exists(dir / "cmp" / p / "summary.json"));
    }
    llm_experiment_close(exp);
}

TEST_CASE("error paths return config status with a message") {
    llm_experiment* exp = nullptr;
    REQUIRE(llm_experiment_open("/nonexistent/config.json", &exp) == LLM_OK);
    CHECK(llm_experiment_run(exp) == LLM_ERR_CONFIG);
    CHECK(std::string(llm_experiment_error(exp)).find("config") != std::string::npos);
    llm_experiment_close(exp);

    CHECK(llm_experiment_open(nullptr, &exp) == LLM_ERR_ARG);
    CHECK(llm_experiment_run(nullptr) == LLM_ERR_ARG);
}

TEST_CASE("rerunning from the echoed effective config reproduces the run") {
    auto dir = testutil::temp_dir();
    std::string cfg = write_experiment(dir);

    llm_experiment* exp = nullptr;
    REQUIRE(llm_experiment_open(cfg.c_str(), &exp) == LLM_OK);
    REQUIRE(llm_experiment_set_output_dir(exp, (dir / "first").string().c_str()) == LLM_OK);
    REQUIRE(llm_experiment_run(exp) == LLM_OK);
    llm_experiment_close(exp);

    // The echoed config points its output at "first"; redirect the rerun.
    std::string echoed = (dir / "first" / "effective_config.json").string();
    REQUIRE(llm_experiment_open(echoed.c_str(), &exp) == LLM_OK);
    REQUIRE(llm_experiment_set_output_dir(exp, (dir / "second").string().c_str()) == LLM_OK);
    REQUIRE(llm_experiment_run(exp) == LLM_OK);
    llm_experiment_close(exp);

    CHECK(slurp(dir / "first" / "summary.json") == slurp(dir / "second" / "summary.json"));
    CHECK(slurp(dir / "first" / "requests.csv") == slurp(dir / "second" / "requests.csv"));
}

TEST_CASE("identical seeds give byte-identical summaries") {
    auto dir = testutil::temp_dir();
    std::string cfg = write_experiment(dir);

    for (const char* out : {"d1", "d2"}) {
        llm_experiment* exp = nullptr;
        REQUIRE(llm_experiment_open(cfg.c_str(), &exp) == LLM_OK);
        REQUIRE(llm_experiment_set_seed(exp, 123) == LLM_OK);
        REQUIRE(llm_experiment_set_output_dir(exp, (dir / out).string().c_str()) == LLM_OK);
        REQUIRE(llm_experiment_run(exp) == LLM_OK);
        llm_experiment_close(exp);
    }
    CHECK(slurp(dir / "d1" / "summary.json") == slurp(dir / "d2" / "summary.json"));
    CHECK(slurp(dir / "d1" / "requests.csv") == slurp(dir / "d2" / "requests.csv"));
}
