// Command-line surface: data generation, teacher training, distillation runs,
// MI benchmarking, random search, fANOVA reports, meta-model training and
// pipeline recommendation. All outputs are JSON-lines / CSV data tables,
// written atomically (temp file + rename) with a manifest next to them.
//
// Exit codes: 0 success, 2 usage/config error, 1 runtime failure.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "distillkit/meta.hpp"
#include "distillkit/search.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dk;

namespace {

constexpr const char* kVersion = "0.1.0";

uint64_t fnv1a(const std::string& s) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

void write_atomic(const fs::path& path, const std::string& content) {
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out << content;
    }
    fs::rename(tmp, path);
}

// Moves a file produced by a library save routine into place atomically.
template <typename SaveFn>
void save_atomic(const fs::path& path, SaveFn&& save) {
    fs::path tmp = path;
    tmp += ".tmp";
    save(tmp.string());
    fs::rename(tmp, path);
}

void write_manifest(const fs::path& outdir, const std::string& verb,
                    const std::string& config_text, uint64_t seed, double wall_time,
                    const std::vector<std::string>& outputs) {
    json j{{"verb", verb},
           {"config_hash", fnv1a(config_text)},
           {"seed", seed},
           {"wall_time", wall_time},
           {"outputs", outputs},
           {"versions", json{{"distillkit", kVersion}, {"format", 1}}}};
    write_atomic(outdir / "manifest.json", j.dump(2) + "\n");
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Dataset load_task_dataset(const std::string& path, const std::string& task, int vocab,
                          int classes) {
    return load_dataset(path, task_kind_from_string(task), vocab, classes);
}

// Record files must be byte-identical across reruns with the same seed, so
// wall-clock time lives in the manifest, not in the records.
void save_records_deterministic(std::vector<RunRecord> records, const fs::path& path) {
    for (RunRecord& r : records) r.wall_time = 0.0;
    save_atomic(path, [&](const std::string& p) { save_run_records(records, p); });
}

struct DataArgs {
    std::string train, eval, task = "classification";
    int vocab = 32, classes = 4;

    void attach(CLI::App* cmd, bool need_eval = true) {
        cmd->add_option("--train", train, "training split (jsonl)")->required();
        if (need_eval) cmd->add_option("--eval", eval, "evaluation split (jsonl)")->required();
        cmd->add_option("--task", task, "classification|tagging")
            ->check(CLI::IsMember({"classification", "tagging"}));
        cmd->add_option("--vocab", vocab, "token vocabulary size");
        cmd->add_option("--classes", classes, "number of classes / tags");
    }
};

int run_gen_data(const std::string& out, const std::string& task, int n, int vocab, int classes,
                 int min_len, int max_len, double eval_frac, uint64_t seed) {
    auto t0 = std::chrono::steady_clock::now();
    fs::create_directories(out);
    Dataset d = task == "tagging"
                    ? synth_tagging(n, vocab, classes, min_len, max_len, seed)
                    : synth_classification(n, vocab, classes, min_len, max_len, seed);
    auto [train, eval] = split_dataset(d, 1.0 - eval_frac);
    fs::path dir(out);
    save_atomic(dir / "train.jsonl", [&](const std::string& p) { save_dataset(train, p); });
    save_atomic(dir / "eval.jsonl", [&](const std::string& p) { save_dataset(eval, p); });
    std::ostringstream cfg;
    cfg << "gen-data task=" << task << " n=" << n << " vocab=" << vocab
        << " classes=" << classes << " len=" << min_len << ".." << max_len
        << " eval_frac=" << eval_frac;
    write_manifest(dir, "gen-data", cfg.str(), seed, seconds_since(t0),
                   {"train.jsonl", "eval.jsonl"});
    std::cout << "wrote " << train.examples.size() << " train / " << eval.examples.size()
              << " eval examples to " << out << "\n";
    return 0;
}

int run_train_teacher(const DataArgs& data, const std::string& out, int layers, int hidden,
                      int mid, int heads, int epochs, int batch, double lr, uint64_t seed) {
    auto t0 = std::chrono::steady_clock::now();
    fs::create_directories(out);
    Dataset train = load_task_dataset(data.train, data.task, data.vocab, data.classes);
    Dataset eval = load_task_dataset(data.eval, data.task, data.vocab, data.classes);

    EncoderConfig cfg;
    cfg.n_layers = layers;
    cfg.h_units = hidden;
    cfg.h_mid = mid;
    cfg.n_heads = heads;
    cfg.vocab_size = data.vocab;
    cfg.n_classes = data.classes;
    cfg.head = train.task == TaskKind::Tagging ? HeadKind::Tagging : HeadKind::Classification;
    Rng rng(seed);
    EncoderModel teacher =
        train_supervised(EncoderModel::init(cfg, rng), train, epochs, batch, lr, seed);

    fs::path dir(out);
    save_atomic(dir / "teacher.ckpt", [&](const std::string& p) { save_checkpoint(teacher, p); });
    double score = evaluate(teacher, eval);
    json metrics{{"eval_score", score}, {"train_examples", train.examples.size()}};
    write_atomic(dir / "metrics.json", metrics.dump(2) + "\n");
    std::ostringstream cs;
    cs << "train-teacher layers=" << layers << " hidden=" << hidden << " epochs=" << epochs
       << " batch=" << batch << " lr=" << lr;
    write_manifest(dir, "train-teacher", cs.str(), seed, seconds_since(t0),
                   {"teacher.ckpt", "metrics.json"});
    std::cout << "teacher eval score: " << score << "\n";
    return 0;
}

EncoderModel make_student_init(const EncoderModel& teacher, int layers, int hidden,
                               uint64_t seed) {
    EncoderConfig cfg = teacher.cfg;
    cfg.n_layers = layers;
    if (hidden > 0) cfg.h_units = hidden, cfg.h_mid = 2 * hidden;
    Rng rng(Rng(seed).stream("student-init"));
    return EncoderModel::init(cfg, rng);
}

int run_distill(const std::string& config_path, const DataArgs& data,
                const std::string& teacher_path, const std::string& out, int student_layers,
                int student_hidden, const std::string& dataset_id, int64_t seed_override) {
    auto t0 = std::chrono::steady_clock::now();
    fs::create_directories(out);
    DistillerConfig cfg = DistillerConfig::parse_text(read_file(config_path));
    if (seed_override >= 0) cfg.seed = static_cast<uint64_t>(seed_override);
    cfg.validate();

    Dataset train = load_task_dataset(data.train, data.task, data.vocab, data.classes);
    Dataset eval = load_task_dataset(data.eval, data.task, data.vocab, data.classes);
    EncoderModel teacher = load_checkpoint(teacher_path);
    EncoderModel student = make_student_init(teacher, student_layers, student_hidden, cfg.seed);

    DistillResult res = distill(cfg, train, eval, teacher, student, dataset_id);
    fs::path dir(out);
    save_atomic(dir / "student.ckpt",
                [&](const std::string& p) { save_checkpoint(res.student, p); });
    save_records_deterministic({res.record}, dir / "records.jsonl");
    write_manifest(dir, "distill", cfg.to_text(), cfg.seed, seconds_since(t0),
                   {"student.ckpt", "records.jsonl"});
    std::cout << "teacher " << res.record.teacher_score << " student "
              << res.record.student_score << " ratio " << res.record.ratio << "\n";
    return 0;
}

int run_mi_bench(const std::string& out, double rho, double alpha, int d, int batch, int steps,
                 uint64_t seed) {
    auto t0 = std::chrono::steady_clock::now();
    fs::create_directories(out);
    MiTrainResult res =
        train_mi_alpha(gaussian_pair_sampler(rho, d), d, d, alpha, steps, batch, seed);
    double analytic = gaussian_mi_oracle(rho, d);

    std::ostringstream csv;
    csv << "distribution,rho,d,alpha,batch,seed,estimate,analytic_mi\n";
    csv << "gaussian," << rho << ',' << d << ',' << alpha << ',' << batch << ',' << seed << ','
        << std::fixed << std::setprecision(6) << res.estimate << ',' << analytic << "\n";
    fs::path dir(out);
    write_atomic(dir / "mi_bench.csv", csv.str());

    std::ostringstream trace;
    trace << "step,bound\n";
    for (size_t i = 0; i < res.bound_trace.size(); ++i)
        trace << i << ',' << res.bound_trace[i] << "\n";
    write_atomic(dir / "mi_trace.csv", trace.str());

    std::ostringstream cs;
    cs << "mi-bench rho=" << rho << " alpha=" << alpha << " d=" << d << " batch=" << batch
       << " steps=" << steps;
    write_manifest(dir, "mi-bench", cs.str(), seed, seconds_since(t0),
                   {"mi_bench.csv", "mi_trace.csv"});
    std::cout << csv.str();
    return 0;
}

int run_search(const DataArgs& data, const std::string& teacher_path, const std::string& out,
               int budget, int workers, int student_layers, int student_hidden, int epochs,
               int batch, double lr, const std::string& dataset_id, uint64_t seed) {
    auto t0 = std::chrono::steady_clock::now();
    fs::create_directories(out);
    Dataset train = load_task_dataset(data.train, data.task, data.vocab, data.classes);
    Dataset eval = load_task_dataset(data.eval, data.task, data.vocab, data.classes);
    EncoderModel teacher = load_checkpoint(teacher_path);

    SearchSpace space = SearchSpace::full();
    auto runner = [&](const DistillerConfig& sampled, int) {
        DistillerConfig cfg = sampled;
        cfg.epochs = epochs;
        cfg.batch_size = batch;
        cfg.learning_rate = lr;
        EncoderModel student =
            make_student_init(teacher, student_layers, student_hidden, cfg.seed);
        return distill(cfg, train, eval, teacher, student, dataset_id).record;
    };
    std::vector<RunRecord> records = random_search(space, budget, seed, runner, workers);

    fs::path dir(out);
    save_records_deterministic(records, dir / "records.jsonl");
    int failed = 0;
    for (const RunRecord& r : records) failed += r.failed;
    std::ostringstream cs;
    cs << "search budget=" << budget << " epochs=" << epochs << " batch=" << batch
       << " lr=" << lr << " student_layers=" << student_layers;
    write_manifest(dir, "search", cs.str(), seed, seconds_since(t0), {"records.jsonl"});
    std::cout << records.size() << " trials (" << failed << " failed) -> "
              << (dir / "records.jsonl").string() << "\n";
    return 0;
}

int run_fanova(const std::string& records_path, const std::string& out, uint64_t seed) {
    auto t0 = std::chrono::steady_clock::now();
    fs::create_directories(out);
    std::vector<RunRecord> records = load_run_records(records_path);
    ImportanceReport rep = fanova_importance(records, seed);
    fs::path dir(out);
    save_atomic(dir / "importance.json",
                [&](const std::string& p) { save_importance_report(rep, p); });
    write_manifest(dir, "fanova", "fanova records=" + records_path, seed, seconds_since(t0),
                   {"importance.json"});
    for (const auto& [axis, frac] : rep.individual)
        std::cout << axis << ": " << frac << "\n";
    return 0;
}

int run_meta_train(const std::string& rows_path, const std::string& out, int rounds, int depth,
                   double shrinkage, double subsample, uint64_t seed) {
    auto t0 = std::chrono::steady_clock::now();
    fs::create_directories(out);
    std::vector<MetaRow> rows = load_meta_rows(rows_path);
    GbrtSettings settings{rounds, depth, shrinkage, subsample};
    MetaModel model = train_meta(rows, settings, seed);
    fs::path dir(out);
    save_atomic(dir / "meta_model.json", [&](const std::string& p) { model.save(p); });

    LodoResult lodo = lodo_eval(rows, settings, seed);
    json per = json::object();
    for (const auto& [id, rho] : lodo.per_dataset)
        per[id] = rho ? json(*rho) : json(nullptr);
    json jl{{"per_dataset", per}, {"mean", lodo.mean}, {"skipped", lodo.skipped}};
    write_atomic(dir / "lodo.json", jl.dump(2) + "\n");

    std::ostringstream cs;
    cs << "meta-train rounds=" << rounds << " depth=" << depth << " shrinkage=" << shrinkage
       << " subsample=" << subsample;
    write_manifest(dir, "meta-train", cs.str(), seed, seconds_since(t0),
                   {"meta_model.json", "lodo.json"});
    std::cout << "lodo mean spearman: " << lodo.mean << " (" << lodo.skipped << " skipped)\n";
    return 0;
}

int run_recommend(const std::string& model_path, const std::string& rows_path,
                  const std::string& dataset_id, const std::string& out, int top_n,
                  uint64_t seed) {
    auto t0 = std::chrono::steady_clock::now();
    fs::create_directories(out);
    MetaModel model = MetaModel::load(model_path);
    std::vector<MetaRow> rows = load_meta_rows(rows_path);
    const MetaRow* match = nullptr;
    for (const MetaRow& r : rows)
        if (dataset_id.empty() || r.dataset_id == dataset_id) {
            match = &r;
            break;
        }
    if (!match)
        throw std::invalid_argument("no meta row with dataset_id '" + dataset_id + "'");

    std::vector<Recommendation> recs =
        recommend(model, match->features, SearchSpace::full(), top_n);
    std::ostringstream csv;
    csv << "rank,predicted_ratio,inter_loss,pred_loss,mapping,aug\n";
    for (size_t i = 0; i < recs.size(); ++i) {
        std::vector<std::string> vals = axis_values(recs[i].config);
        csv << (i + 1) << ',' << recs[i].predicted_ratio << ',' << vals[0] << ',' << vals[1]
            << ',' << vals[2] << ',' << vals[3] << "\n";
    }
    fs::path dir(out);
    write_atomic(dir / "recommendations.csv", csv.str());
    write_manifest(dir, "recommend", "recommend model=" + model_path + " top_n",
                   seed, seconds_since(t0), {"recommendations.csv"});
    std::cout << csv.str();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"distillkit: knowledge-distillation experimentation toolkit"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all");

    uint64_t seed = 0;
    std::string out = ".";

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    std::string gen_task = "classification";
    int gen_n = 500, gen_vocab = 32, gen_classes = 4, gen_minlen = 5, gen_maxlen = 12;
    double gen_eval_frac = 0.2;
    gen->add_option("--out", out, "output directory")->required();
    gen->add_option("--task", gen_task)->check(CLI::IsMember({"classification", "tagging"}));
    gen->add_option("--n", gen_n, "number of examples");
    gen->add_option("--vocab", gen_vocab);
    gen->add_option("--classes", gen_classes);
    gen->add_option("--min-len", gen_minlen);
    gen->add_option("--max-len", gen_maxlen);
    gen->add_option("--eval-frac", gen_eval_frac);
    gen->add_option("--seed", seed);

    // train-teacher
    auto* tt = app.add_subcommand("train-teacher", "train a supervised teacher");
    DataArgs tt_data;
    tt_data.attach(tt);
    int tt_layers = 4, tt_hidden = 32, tt_mid = 64, tt_heads = 4, tt_epochs = 20, tt_batch = 16;
    double tt_lr = 3e-3;
    tt->add_option("--out", out)->required();
    tt->add_option("--layers", tt_layers);
    tt->add_option("--hidden", tt_hidden);
    tt->add_option("--mid", tt_mid);
    tt->add_option("--heads", tt_heads);
    tt->add_option("--epochs", tt_epochs);
    tt->add_option("--batch", tt_batch);
    tt->add_option("--lr", tt_lr);
    tt->add_option("--seed", seed);

    // distill
    auto* ds = app.add_subcommand("distill", "run one distillation recipe");
    DataArgs ds_data;
    ds_data.attach(ds);
    std::string ds_config, ds_teacher, ds_id = "cli";
    int ds_layers = 2, ds_hidden = 0;
    int64_t ds_seed = -1;
    ds->add_option("--config", ds_config, "recipe file (key = value text)")->required();
    ds->add_option("--teacher", ds_teacher, "teacher checkpoint")->required();
    ds->add_option("--out", out)->required();
    ds->add_option("--student-layers", ds_layers);
    ds->add_option("--student-hidden", ds_hidden, "0: inherit teacher width");
    ds->add_option("--dataset-id", ds_id);
    ds->add_option("--seed", ds_seed, "overrides the seed in the recipe file");

    // mi-bench
    auto* mb = app.add_subcommand("mi-bench", "train an MI estimator on Gaussians");
    double mb_rho = 0.8, mb_alpha = 0.9;
    int mb_d = 1, mb_batch = 64, mb_steps = 1000;
    mb->add_option("--out", out)->required();
    mb->add_option("--rho", mb_rho);
    mb->add_option("--alpha", mb_alpha);
    mb->add_option("--d", mb_d);
    mb->add_option("--batch", mb_batch);
    mb->add_option("--steps", mb_steps);
    mb->add_option("--seed", seed);

    // search
    auto* sr = app.add_subcommand("search", "random search over the recipe space");
    DataArgs sr_data;
    sr_data.attach(sr);
    std::string sr_teacher, sr_id = "cli";
    int sr_budget = 8, sr_workers = 1, sr_layers = 2, sr_hidden = 0, sr_epochs = 5,
        sr_batch = 16;
    double sr_lr = 1e-3;
    sr->add_option("--teacher", sr_teacher)->required();
    sr->add_option("--out", out)->required();
    sr->add_option("--budget", sr_budget, "number of sampled configs");
    sr->add_option("--workers", sr_workers, "parallel trials");
    sr->add_option("--student-layers", sr_layers);
    sr->add_option("--student-hidden", sr_hidden);
    sr->add_option("--epochs", sr_epochs);
    sr->add_option("--batch", sr_batch);
    sr->add_option("--lr", sr_lr);
    sr->add_option("--dataset-id", sr_id);
    sr->add_option("--seed", seed);

    // fanova
    auto* fa = app.add_subcommand("fanova", "axis importance from search records");
    std::string fa_records;
    fa->add_option("--records", fa_records, "records.jsonl from search")->required();
    fa->add_option("--out", out)->required();
    fa->add_option("--seed", seed);

    // meta-train
    auto* mt = app.add_subcommand("meta-train", "fit the meta-regressor + LODO report");
    std::string mt_rows;
    int mt_rounds = 200, mt_depth = 3;
    double mt_shrinkage = 0.1, mt_subsample = 0.8;
    mt->add_option("--rows", mt_rows, "meta rows (jsonl)")->required();
    mt->add_option("--out", out)->required();
    mt->add_option("--rounds", mt_rounds);
    mt->add_option("--depth", mt_depth);
    mt->add_option("--shrinkage", mt_shrinkage);
    mt->add_option("--subsample", mt_subsample);
    mt->add_option("--seed", seed);

    // recommend
    auto* rc = app.add_subcommand("recommend", "rank recipes for a dataset");
    std::string rc_model, rc_rows, rc_id;
    int rc_top = 5;
    rc->add_option("--model", rc_model, "meta_model.json")->required();
    rc->add_option("--rows", rc_rows, "meta rows holding the dataset features")->required();
    rc->add_option("--dataset-id", rc_id, "defaults to the first row");
    rc->add_option("--out", out)->required();
    rc->add_option("--top-n", rc_top);
    rc->add_option("--seed", seed);

    if (argc <= 1) {
        std::cerr << app.help() << "\n";
        return 2;
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        std::cerr << e.what() << "\n";
        return 2;
    }

    try {
        if (*gen)
            return run_gen_data(out, gen_task, gen_n, gen_vocab, gen_classes, gen_minlen,
                                gen_maxlen, gen_eval_frac, seed);
        if (*tt)
            return run_train_teacher(tt_data, out, tt_layers, tt_hidden, tt_mid, tt_heads,
                                     tt_epochs, tt_batch, tt_lr, seed);
        if (*ds)
            return run_distill(ds_config, ds_data, ds_teacher, out, ds_layers, ds_hidden, ds_id,
                               ds_seed);
        if (*mb) return run_mi_bench(out, mb_rho, mb_alpha, mb_d, mb_batch, mb_steps, seed);
        if (*sr)
            return run_search(sr_data, sr_teacher, out, sr_budget, sr_workers, sr_layers,
                              sr_hidden, sr_epochs, sr_batch, sr_lr, sr_id, seed);
        if (*fa) return run_fanova(fa_records, out, seed);
        if (*mt)
            return run_meta_train(mt_rows, out, mt_rounds, mt_depth, mt_shrinkage, mt_subsample,
                                  seed);
        if (*rc) return run_recommend(rc_model, rc_rows, rc_id, out, rc_top, seed);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
