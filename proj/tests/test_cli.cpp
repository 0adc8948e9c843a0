#include <doctest.h>

#include <cstdlib>
#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "helpers.hpp"
#include "nearl/analysis.hpp"
#include "nearl/commands.hpp"
#include "nearl/error.hpp"
#include "nearl/run_config.hpp"

using namespace nearl;
using nlohmann::json;

namespace {

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void write(const std::filesystem::path& p, const std::string& text) {
    std::ofstream(p) << text;
}

struct Run {
    int status;
    std::string out;
    std::string err;
};

Run run_cli(const std::string& args, const std::filesystem::path& dir) {
    const auto out = dir / "stdout.txt";
    const auto err = dir / "stderr.txt";
    const std::string cmd = std::string(NEARL_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
    const int raw = std::system(cmd.c_str());
    return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, slurp(out), slurp(err)};
}

// Tiny model and matching small data so command runs take well under a second.
json tiny_config(const std::string& out_dir) {
    return json{{"model", {{"preset", "tiny"}}},
                {"train", {{"epochs", 2}, {"batch_size", 8}, {"learning_rate", 0.01}}},
                {"data", {{"spec", {{"n_patches", 4}, {"patch_dim", 4}, {"n_train", 24}, {"n_val", 12}, {"n_test", 12}}}}},
                {"output_dir", out_dir}};
}

}  // namespace

TEST_CASE("config parsing is strict and resolves paths against the file") {
    const auto dir = testing::scratch_dir("cli_parse");
    write(dir / "c.json", R"({"model": {"preset": "tiny", "rank": 3}, "output_dir": "out", "data": {"path": "d.nrld"}})");
    const RunConfig rc = load_run_config(dir / "c.json");
    CHECK(rc.model.rank == 3);
    CHECK(rc.model.d_image == ModelConfig::tiny().d_image);
    CHECK(rc.output_dir == dir / "out");
    CHECK(*rc.data.path == dir / "d.nrld");

    const auto kind = [&](const std::string& text) {
        write(dir / "bad.json", text);
        try {
            load_run_config(dir / "bad.json");
        } catch (const Error& e) {
            return e.kind();
        }
        return ErrorKind::shape;
    };
    CHECK(kind(R"({"output_dir": "o", "extra": 1})") == ErrorKind::config);
    CHECK(kind(R"({"output_dir": "o", "train": {"epoch": 3}})") == ErrorKind::config);
    CHECK(kind(R"({"output_dir": "o", "model": {"rank": -1}})") == ErrorKind::config);
    CHECK(kind(R"({"output_dir": "o", "model": {"rank": "8"}})") == ErrorKind::config);
    CHECK(kind(R"({"output_dir": "o", "model": {"mode": "half"}})") == ErrorKind::config);
    CHECK(kind(R"({"output_dir": "o", "train": {"epochs": 0}})") == ErrorKind::config);
    CHECK(kind(R"({"output_dir": )") == ErrorKind::config);
    CHECK(kind(R"({"model": {}})") == ErrorKind::config);
    CHECK_THROWS_AS(load_run_config(dir / "missing.json"), Error);
}

TEST_CASE("the manifest parses back to the same configuration") {
    const auto dir = testing::scratch_dir("cli_manifest");
    RunConfig rc = parse_run_config(tiny_config("o"), dir);
    rc.model.layer_mask = std::vector<std::size_t>{2};
    rc.model.mode = AblationMode::no_useformer;
    rc.model.temperature = 0.07;
    rc.train.learning_rate = 3e-4;
    const json echo = to_json(rc);
    const RunConfig back = parse_run_config(echo, "/elsewhere");
    CHECK(to_json(back) == echo);
}

TEST_CASE("params prints the audit total and writes the report") {
    const auto dir = testing::scratch_dir("cli_params");
    write(dir / "c.json", tiny_config("out").dump());
    const Run r = run_cli("params --config " + (dir / "c.json").string(), dir);
    REQUIRE(r.status == 0);
    const std::size_t total = count_trainable(ModelConfig::tiny()).total;
    CHECK(r.out.find(std::to_string(total)) != std::string::npos);
    CHECK(slurp(dir / "out" / "audit.txt") == r.out);
    CHECK(std::filesystem::exists(dir / "out" / "manifest.json"));
}

TEST_CASE("train twice with one seed gives identical artifacts; eval and analyze read them") {
    const auto dir = testing::scratch_dir("cli_train");
    write(dir / "a.json", tiny_config("a").dump());
    write(dir / "b.json", tiny_config("b").dump());
    REQUIRE(run_cli("train -c " + (dir / "a.json").string(), dir).status == 0);
    REQUIRE(run_cli("train -c " + (dir / "b.json").string(), dir).status == 0);
    CHECK(slurp(dir / "a" / "metrics.csv") == slurp(dir / "b" / "metrics.csv"));
    CHECK(slurp(dir / "a" / "checkpoint.nearl") == slurp(dir / "b" / "checkpoint.nearl"));
    CHECK(slurp(dir / "a" / "summary.json") == slurp(dir / "b" / "summary.json"));

    // Re-running from the manifest reproduces the run byte for byte.
    const std::string metrics = slurp(dir / "a" / "metrics.csv");
    const std::string ckpt = slurp(dir / "a" / "checkpoint.nearl");
    REQUIRE(run_cli("train -c " + (dir / "a" / "manifest.json").string(), dir).status == 0);
    CHECK(slurp(dir / "a" / "metrics.csv") == metrics);
    CHECK(slurp(dir / "a" / "checkpoint.nearl") == ckpt);

    json e = tiny_config("eval");
    e["checkpoint"] = "a/checkpoint.nearl";
    write(dir / "e.json", e.dump());
    const Run ev = run_cli("eval -c " + (dir / "e.json").string(), dir);
    CHECK(ev.status == 0);
    const json ej = json::parse(slurp(dir / "eval" / "eval.json"));
    CHECK(ej["val"]["acc"].get<double>() == json::parse(slurp(dir / "a" / "summary.json"))["best_val_acc"].get<double>());

    json an = tiny_config("an");
    write(dir / "an.json", an.dump());
    const Run no_ckpt = run_cli("analyze -c " + (dir / "an.json").string(), dir);
    CHECK(no_ckpt.status == exit_code(ErrorKind::config));
    const Run ok = run_cli("analyze -c " + (dir / "an.json").string() + " --checkpoint " +
                               (dir / "a" / "checkpoint.nearl").string(), dir);
    CHECK(ok.status == 0);
    const json aj = json::parse(slurp(dir / "an" / "analysis.json"));
    CHECK(aj.contains("gap_increase"));
    CHECK(slurp(dir / "an" / "pca.csv").rfind("model,index,label,pc1,pc2\n", 0) == 0);
}

TEST_CASE("gen-data then train from the file; eval of the frozen model sits at chance") {
    const auto dir = testing::scratch_dir("cli_data");
    json g = json{{"data", {{"spec", json::object()}}}, {"output_dir", "data"}};
    write(dir / "g.json", g.dump());
    REQUIRE(run_cli("gen-data -c " + (dir / "g.json").string(), dir).status == 0);
    const DatasetSpec spec;
    CHECK(load_dataset(dir / "data" / "dataset.nrld").train.size() == spec.n_train);

    json f = json{{"model", {{"mode", "frozen"}}}, {"data", {{"path", "data/dataset.nrld"}}}, {"output_dir", "frozen"}};
    write(dir / "f.json", f.dump());
    REQUIRE(run_cli("eval -c " + (dir / "f.json").string(), dir).status == 0);
    const json ej = json::parse(slurp(dir / "frozen" / "eval.json"));
    const auto [lo, hi] = chance_band(spec.n_test, 2);
    const double acc = ej["test"]["acc"].get<double>();
    CHECK(acc >= lo);
    CHECK(acc <= hi);
    CHECK(ej["test"]["within_chance_band"].get<bool>());
}

TEST_CASE("failures map to distinct exit codes and one-line diagnostics") {
    const auto dir = testing::scratch_dir("cli_errors");
    write(dir / "unknown.json", R"({"output_dir": "o", "modle": {}})");
    const Run cfg = run_cli("params -c " + (dir / "unknown.json").string(), dir);
    CHECK(cfg.status == exit_code(ErrorKind::config));
    CHECK(cfg.err.rfind("error: config: ", 0) == 0);
    CHECK(std::count(cfg.err.begin(), cfg.err.end(), '\n') == 1);

    write(dir / "missing.json", R"({"output_dir": "o", "data": {"path": "nope.nrld"}})");
    const Run miss = run_cli("train -c " + (dir / "missing.json").string(), dir);
    CHECK(miss.status == exit_code(ErrorKind::missing_file));
    CHECK(miss.err.rfind("error: missing_file: ", 0) == 0);

    json mismatch = tiny_config("o");
    mismatch["data"]["spec"]["patch_dim"] = 5;
    write(dir / "mm.json", mismatch.dump());
    const Run mm = run_cli("train -c " + (dir / "mm.json").string(), dir);
    CHECK(mm.status == exit_code(ErrorKind::dim_mismatch));

    write(dir / "garbage.nrld", "NRLD1\x01garbage");
    json trunc = tiny_config("o");
    trunc["data"] = {{"path", "garbage.nrld"}};
    write(dir / "t.json", trunc.dump());
    CHECK(run_cli("train -c " + (dir / "t.json").string(), dir).status == exit_code(ErrorKind::truncated));

    json nonfinite = tiny_config("o");
    nonfinite["train"]["learning_rate"] = 1e300;
    write(dir / "nf.json", nonfinite.dump());
    const Run nf = run_cli("train -c " + (dir / "nf.json").string(), dir);
    CHECK(nf.status == exit_code(ErrorKind::non_finite));

    std::set<int> codes;
    for (ErrorKind k : {ErrorKind::shape, ErrorKind::config, ErrorKind::vocabulary, ErrorKind::missing_file,
                        ErrorKind::format, ErrorKind::truncated, ErrorKind::dim_mismatch, ErrorKind::non_finite,
                        ErrorKind::invariant}) {
        CHECK(exit_code(k) != 0);
        CHECK(codes.insert(exit_code(k)).second);
    }
}

TEST_CASE("inputs are never modified") {
    const auto dir = testing::scratch_dir("cli_readonly");
    json g = json{{"data", {{"spec", {{"n_patches", 4}, {"patch_dim", 4}, {"n_train", 16}, {"n_val", 8}, {"n_test", 8}}}}},
                  {"output_dir", "data"}};
    write(dir / "g.json", g.dump());
    REQUIRE(run_cli("gen-data -c " + (dir / "g.json").string(), dir).status == 0);
    const std::string data_before = slurp(dir / "data" / "dataset.nrld");
    json t = tiny_config("run");
    t["data"] = {{"path", "data/dataset.nrld"}};
    write(dir / "t.json", t.dump());
    const std::string cfg_before = slurp(dir / "t.json");
    REQUIRE(run_cli("train -c " + (dir / "t.json").string(), dir).status == 0);
    const std::string ckpt_before = slurp(dir / "run" / "checkpoint.nearl");
    json e = t;
    e["output_dir"] = "eval";
    e["checkpoint"] = "run/checkpoint.nearl";
    write(dir / "e.json", e.dump());
    REQUIRE(run_cli("eval -c " + (dir / "e.json").string(), dir).status == 0);
    CHECK(slurp(dir / "data" / "dataset.nrld") == data_before);
    CHECK(slurp(dir / "t.json") == cfg_before);
    CHECK(slurp(dir / "run" / "checkpoint.nearl") == ckpt_before);
}
