#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
// End-to-end checks of the command-line tool: exit codes, output file
// formats, manifests, and byte-identical reruns under a fixed seed.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

struct CmdResult {
    int exit_code = -1;
    std::string output;  // stdout + stderr
};

CmdResult run_cli(const std::string& args) {
    const std::string log = "cli_out.log";
    std::string cmd = std::string(CLI_BINARY) + " " + args + " > " + log + " 2>&1";
    int status = std::system(cmd.c_str());
    CmdResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(log);
    std::stringstream ss;
    ss << in.rdbuf();
    r.output = ss.str();
    std::remove(log.c_str());
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// One tiny dataset + teacher shared by the heavier cases.
struct Workbench {
    fs::path root = fs::path("cli_bench");
    Workbench() {
        fs::remove_all(root);
        fs::create_directories(root);
        CmdResult gen = run_cli("gen-data --out " + (root / "data").string() +
                                " --n 60 --vocab 24 --classes 3 --min-len 4 --max-len 8 --seed 1");
        REQUIRE(gen.exit_code == 0);
        CmdResult tt = run_cli("train-teacher --train " + (root / "data/train.jsonl").string() +
                               " --eval " + (root / "data/eval.jsonl").string() +
                               " --vocab 24 --classes 3 --out " + (root / "teacher").string() +
                               " --layers 2 --epochs 3 --batch 8 --seed 2");
        REQUIRE(tt.exit_code == 0);
    }
    ~Workbench() { fs::remove_all(root); }
    std::string data_flags() const {
        return " --train " + (root / "data/train.jsonl").string() + " --eval " +
               (root / "data/eval.jsonl").string() + " --vocab 24 --classes 3 --teacher " +
               (root / "teacher/teacher.ckpt").string();
    }
};

}  // namespace

TEST_CASE("cli: no arguments prints usage and exits 2") {
    CmdResult r = run_cli("");
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("Usage") != std::string::npos);
    CHECK(r.output.find("distill") != std::string::npos);
}

TEST_CASE("cli: unknown verbs and missing required flags exit 2") {
    CHECK(run_cli("frobnicate").exit_code == 2);
    CHECK(run_cli("gen-data").exit_code == 2);  // --out missing
    CHECK(run_cli("fanova --records no_such_file.jsonl --out cli_tmp").exit_code != 0);
    fs::remove_all("cli_tmp");
}

TEST_CASE("cli: mi-bench emits the analytic reference alongside the estimate") {
    fs::remove_all("cli_mib");
    CmdResult r = run_cli("mi-bench --out cli_mib --rho 0.8 --alpha 0.9 --steps 30 --batch 16 "
                          "--seed 3");
    REQUIRE(r.exit_code == 0);
    std::string csv = slurp("cli_mib/mi_bench.csv");
    CHECK(csv.find("distribution,rho,d,alpha,batch,seed,estimate,analytic_mi") !=
          std::string::npos);
    CHECK(csv.find("0.510826") != std::string::npos);
    CHECK(csv.find("gaussian,0.8,1,0.9,16,3,") != std::string::npos);
    // plot-ready trace with one row per step
    std::string trace = slurp("cli_mib/mi_trace.csv");
    CHECK(trace.rfind("step,bound", 0) == 0);

    nlohmann::json manifest = nlohmann::json::parse(slurp("cli_mib/manifest.json"));
    CHECK(manifest.at("verb") == "mi-bench");
    CHECK(manifest.at("seed") == 3);
    CHECK(manifest.contains("config_hash"));
    CHECK(manifest.at("versions").contains("distillkit"));
    fs::remove_all("cli_mib");
}

TEST_CASE("cli: distill twice with the same seed gives byte-identical records") {
    Workbench wb;
    {
        std::ofstream cfg(wb.root / "recipe.cfg");
        cfg << "inter_loss.kind = MSE\npred_loss = CE\nmapping = Skip\n"
               "epochs = 1\nbatch_size = 8\nlearning_rate = 1e-3\nseed = 5\n";
    }
    std::string base = "distill --config " + (wb.root / "recipe.cfg").string() +
                       wb.data_flags() + " --student-layers 1 --out ";
    REQUIRE(run_cli(base + (wb.root / "run1").string()).exit_code == 0);
    REQUIRE(run_cli(base + (wb.root / "run2").string()).exit_code == 0);
    std::string r1 = slurp(wb.root / "run1/records.jsonl");
    std::string r2 = slurp(wb.root / "run2/records.jsonl");
    CHECK(r1 == r2);
    CHECK(!r1.empty());
    CHECK(fs::exists(wb.root / "run1/student.ckpt"));
    CHECK(fs::exists(wb.root / "run1/manifest.json"));

    // a different seed changes the run
    REQUIRE(run_cli(base + (wb.root / "run3").string() + " --seed 6").exit_code == 0);
    CHECK(slurp(wb.root / "run3/records.jsonl") != r1);
}

TEST_CASE("cli: search reruns are byte-identical regardless of worker count") {
    Workbench wb;
    std::string base = "search" + wb.data_flags() +
                       " --budget 3 --epochs 1 --batch 8 --student-layers 1 --seed 9 --out ";
    REQUIRE(run_cli(base + (wb.root / "s1").string() + " --workers 2").exit_code == 0);
    REQUIRE(run_cli(base + (wb.root / "s2").string() + " --workers 1").exit_code == 0);
    std::string s1 = slurp(wb.root / "s1/records.jsonl");
    CHECK(s1 == slurp(wb.root / "s2/records.jsonl"));
    // one line per trial
    CHECK(std::count(s1.begin(), s1.end(), '\n') == 3);
}
