#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <iostream>
#include <map>
#include <set>

#include "embrenorm/embrenorm.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace embrenorm;

namespace {

constexpr const char* kVersion = "0.1.0";

struct Global {
  std::uint64_t seed = 42;
  unsigned threads = 0;
  std::string out_dir = ".";
  bool json_summary = false;
  Parallelism par;
};

/// What a subcommand hands back to main for the manifest and stdout.
struct Outcome {
  json summary = json::object();
  json config = json::object();
  json timings = json::object();
  std::vector<std::string> outputs;
  int exit_code = 0;
};

void progress(const std::string& msg) { std::cerr << "[embrenorm] " << msg << "\n"; }

std::string utc_stamp() {
  std::time_t t = std::time(nullptr);
  if (const char* sde = std::getenv("SOURCE_DATE_EPOCH")) t = static_cast<std::time_t>(std::strtoll(sde, nullptr, 10));
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

fs::path under(const Global& g, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : fs::path(g.out_dir) / path;
}

void write_text(Outcome& o, const fs::path& path, const std::string& text) {
  store::write_file_atomic(path, text);
  o.outputs.push_back(path.string());
}

void write_json(Outcome& o, const fs::path& path, const json& j) { write_text(o, path, j.dump(2) + "\n"); }

std::vector<RenormMethod> parse_methods(const std::vector<std::string>& names) {
  std::vector<RenormMethod> out;
  for (const auto& n : names) out.push_back(parse_method(n));
  return out;
}

json score_json(const TaskScore& s) {
  return {{"metric", s.metric_name}, {"value", s.value}, {"sampleSize", s.sample_size}, {"sigma", s.sigma}};
}

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

// ---------------------------------------------------------------- prep-corpus

struct PrepOpts {
  std::vector<std::string> inputs;
  std::size_t size = 100000;
  std::size_t min_len = 64;
  std::size_t max_len = 512;
  std::string out = "sentences.txt";
};

Outcome prep_corpus(const Global& g, const PrepOpts& o) {
  Outcome r;
  r.config = {{"inputs", o.inputs}, {"size", o.size}, {"minLen", o.min_len}, {"maxLen", o.max_len}, {"out", o.out}};
  std::vector<std::string> all;
  std::string source;
  for (const auto& in : o.inputs) {
    progress("reading " + in);
    auto s = corpus::load_sentences(in);
    all.insert(all.end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
    source += (source.empty() ? "" : ",") + fs::path(in).filename().string();
  }
  corpus::SampleOptions opt{o.size, o.min_len, o.max_len, g.seed};
  const auto sample = corpus::sample(all, opt, source);
  std::string text;
  for (const auto& s : sample.sentences) text += s + "\n";
  const fs::path out = under(g, o.out);
  write_text(r, out, text);
  r.summary = corpus::manifest(sample, opt);
  fs::path man = out;
  man.replace_extension(".manifest.json");
  write_json(r, man, r.summary);
  progress("sampled " + std::to_string(sample.sentences.size()) + " of " + std::to_string(sample.unique_count) +
           " unique in-bounds sentences");
  return r;
}

// -------------------------------------------------------------- estimate-mean

struct EstimateOpts {
  std::string embeddings;
  std::string model_id;
  std::string corpus_fingerprint;
  std::string corpus_manifest;
  std::string out = "mu.json";
};

Outcome estimate(const Global& g, const EstimateOpts& o) {
  Outcome r;
  const auto m = store::read_embeddings(o.embeddings);
  Fingerprint fp;
  if (!o.corpus_fingerprint.empty()) {
    fp = Fingerprint::from_hex(o.corpus_fingerprint);
  } else if (!o.corpus_manifest.empty()) {
    const auto man = store::parse_json(store::read_file(o.corpus_manifest), o.corpus_manifest);
    fp = Fingerprint::from_hex(store::detail::field(man, "fingerprint", json::value_t::string, "corpus manifest")
                                   .get<std::string>());
  } else {
    fp = m.fingerprint();
  }
  r.config = {{"embeddings", o.embeddings}, {"modelId", o.model_id}, {"corpusFingerprint", fp.hex()}, {"out", o.out}};
  progress("estimating mean over " + std::to_string(m.count()) + " x " + std::to_string(m.dim()));
  const auto bias = estimate_mean(m, o.model_id, fp, g.par);
  const fs::path out = under(g, o.out);
  store::write_bias(bias, out, utc_stamp());
  r.outputs.push_back(out.string());
  r.summary = {{"modelId", bias.model_id}, {"dim", bias.dim()}, {"count", bias.sample_count},
               {"norm", store::round9(bias.norm)}, {"corpusFingerprint", fp.hex()}, {"out", out.string()}};
  progress("|mu| = " + csv::format_number(bias.norm));
  return r;
}

// ---------------------------------------------------------------------- apply

struct ApplyOpts {
  std::string embeddings;
  std::string bias;
  std::string method = "r2";
  std::string policy = "drop";
  std::string out;
};

Outcome apply(const Global& g, const ApplyOpts& o) {
  Outcome r;
  r.config = {{"embeddings", o.embeddings}, {"bias", o.bias}, {"method", o.method}, {"policy", o.policy},
              {"out", o.out}};
  const auto method = parse_method(o.method);
  const auto policy = parse_policy(o.policy);
  const auto m = store::read_embeddings(o.embeddings);
  const auto bias = store::read_bias(o.bias);
  progress("applying " + o.method + " to " + std::to_string(m.count()) + " rows");
  const auto res = apply_matrix(m, bias, method, policy, g.par);
  const fs::path out = under(g, o.out);
  store::write_embeddings(res.matrix, out);
  r.outputs = {store::sidecar_path(out).string(), out.string()};
  r.summary = {{"method", o.method}, {"inputRows", m.count()}, {"outputRows", res.matrix.count()},
               {"droppedIds", res.dropped_ids}, {"out", out.string()}};
  return r;
}

// ----------------------------------------------------------------------- eval

struct EvalOpts {
  std::vector<std::string> tasks;
  std::string bias;
  std::vector<std::string> methods{"identity", "r1", "r2"};
  std::string policy = "drop";
  std::int64_t budget_ms = 0;
  std::string out = "runs.jsonl";
};

std::vector<fs::path> task_files(const std::vector<std::string>& inputs) {
  std::vector<fs::path> out;
  for (const auto& in : inputs) {
    if (fs::is_directory(in)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(in)) {
        const auto name = e.path().filename().string();
        if (e.is_regular_file() && name.size() > 10 && name.ends_with(".task.json")) found.push_back(e.path());
      }
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else {
      out.emplace_back(in);
    }
  }
  if (out.empty()) fail(ErrorCode::InvalidConfig, "no task files found");
  return out;
}

Outcome eval(const Global& g, const EvalOpts& o) {
  Outcome r;
  r.config = {{"tasks", o.tasks}, {"bias", o.bias}, {"methods", o.methods}, {"policy", o.policy},
              {"budgetMs", o.budget_ms > 0 ? json(o.budget_ms) : json(nullptr)}, {"out", o.out}};
  const auto methods = parse_methods(o.methods);
  EvalOptions opt;
  opt.policy = parse_policy(o.policy);
  opt.seed = g.seed;
  opt.parallelism = g.par;
  if (o.budget_ms > 0) opt.budget_ms = o.budget_ms;

  const auto bias = store::read_bias(o.bias);
  std::vector<TaskDataset> tasks;
  for (const auto& f : task_files(o.tasks)) {
    progress("loading " + f.string());
    tasks.push_back(store::read_task_dataset(f));
  }
  progress("running " + std::to_string(tasks.size() * methods.size()) + " task/method combinations");
  const auto records = run_suite(tasks, bias, methods, opt);

  const fs::path out = under(g, o.out);
  store::write_records(records, out, false);
  r.outputs.push_back(out.string());

  std::size_t failed = 0;
  json recs = json::array();
  for (const auto& rec : records) {
    if (!rec.ok()) {
      ++failed;
      progress("FAILED " + rec.task_id + " / " + std::string(to_string(rec.method)) + ": " + rec.error);
    }
    r.timings[rec.task_id + "/" + std::string(to_string(rec.method))] = rec.wall_clock_ms;
    recs.push_back(store::record_to_json(rec, false));
  }
  r.summary = {{"records", recs}, {"ok", records.size() - failed}, {"failed", failed}, {"out", out.string()}};
  r.exit_code = failed ? 2 : 0;
  return r;
}

// -------------------------------------------------------------------- compare

struct CompareOpts {
  std::string baseline;
  std::string treated;
  std::string baseline_method = "identity";
  std::string treated_method = "r2";
  bool combined_sigma = false;
  double delta_threshold = 0.1;
  double rel_threshold = 0.02;
  std::string out = "comparison.csv";
  std::string summary_out = "comparison.json";
};

std::vector<RunRecord> with_method(const std::vector<RunRecord>& all, RenormMethod m) {
  std::vector<RunRecord> out;
  for (const auto& r : all)
    if (r.method == m) out.push_back(r);
  return out;
}

json aggregates_json(const std::vector<stats::ComparisonRow>& rows, stats::GroupBy by) {
  json out = json::array();
  for (const auto& a : stats::aggregate(rows, by))
    out.push_back({{"group", a.group_key}, {"count", a.count}, {"meanDelta", a.mean_delta},
                   {"meanRelDelta", a.mean_rel_delta}, {"aggregateZ", a.aggregate_z},
                   {"fracAbove2Sigma", a.frac_above_2sigma}, {"fracBelowMinus2Sigma", a.frac_below_minus_2sigma},
                   {"rendered", stats::render(a)}});
  return out;
}

json direction_json(const stats::DirectionStats& d) {
  return {{"count", d.count}, {"mean", opt_json(d.mean)}, {"max", opt_json(d.max)}, {"min", opt_json(d.min)}};
}

json extremes_json(const std::vector<stats::ComparisonRow>& rows, stats::GroupBy by, double dt, double rt) {
  json out = json::array();
  for (const auto& e : stats::significant_extremes_by(rows, by, dt, rt))
    out.push_back({{"group", e.group_key}, {"total", e.total}, {"filteredOut", e.filtered_out},
                   {"up", direction_json(e.up)}, {"down", direction_json(e.down)}});
  return out;
}

json rows_json(const std::vector<stats::ComparisonRow>& rows) {
  json out = json::array();
  for (const auto& c : rows)
    out.push_back({{"taskId", c.task_id}, {"taskType", to_string(c.task_type)}, {"modelId", c.model_id},
                   {"baseline", score_json(c.baseline)}, {"treated", score_json(c.treated)}, {"delta", c.delta},
                   {"relDelta", opt_json(c.rel_delta)}, {"z", c.z}, {"rendered", stats::render(c)}});
  return out;
}

json tables_json(const std::vector<stats::ComparisonRow>& rows, double dt, double rt) {
  if (rows.empty()) return {{"rows", json::array()}};
  return {{"byTaskType", aggregates_json(rows, stats::GroupBy::TaskType)},
          {"byModel", aggregates_json(rows, stats::GroupBy::Model)},
          {"extremesByModel", extremes_json(rows, stats::GroupBy::Model, dt, rt)},
          {"extremesByTask", extremes_json(rows, stats::GroupBy::TaskType, dt, rt)},
          {"rows", rows_json(rows)}};
}

Outcome compare(const Global& g, const CompareOpts& o) {
  Outcome r;
  const std::string treated_path = o.treated.empty() ? o.baseline : o.treated;
  r.config = {{"baseline", o.baseline}, {"treated", treated_path}, {"baselineMethod", o.baseline_method},
              {"treatedMethod", o.treated_method}, {"combinedSigma", o.combined_sigma},
              {"deltaThreshold", o.delta_threshold}, {"relThreshold", o.rel_threshold}, {"out", o.out},
              {"summaryOut", o.summary_out}};
  const auto base = with_method(store::read_records(o.baseline), parse_method(o.baseline_method));
  const auto treated = with_method(store::read_records(treated_path), parse_method(o.treated_method));
  const auto res = stats::compare(base, treated, o.combined_sigma ? stats::SigmaMode::Combined
                                                                  : stats::SigmaMode::Baseline);
  for (const auto& s : res.skipped) progress("skipped " + s + " (failed in one arm)");
  write_text(r, under(g, o.out), stats::comparison_csv(res.rows, o.treated_method));
  r.summary = tables_json(res.rows, o.delta_threshold, o.rel_threshold);
  r.summary["method"] = o.treated_method;
  r.summary["skipped"] = res.skipped;
  write_json(r, under(g, o.summary_out), r.summary);
  return r;
}

// --------------------------------------------------------------------- report

struct ReportOpts {
  std::vector<std::string> comparisons;
  std::vector<std::string> biases;
  double delta_threshold = 0.1;
  double rel_threshold = 0.02;
  std::string out = "report.json";
  std::string correlation_out = "correlation.csv";
};

Outcome report(const Global& g, const ReportOpts& o) {
  Outcome r;
  r.config = {{"comparisons", o.comparisons}, {"biases", o.biases}, {"deltaThreshold", o.delta_threshold},
              {"relThreshold", o.rel_threshold}, {"out", o.out}, {"correlationOut", o.correlation_out}};
  std::vector<stats::ComparisonRow> rows;
  for (const auto& c : o.comparisons) {
    auto part = stats::parse_comparison_csv(store::read_file(c));
    rows.insert(rows.end(), part.begin(), part.end());
  }
  if (rows.empty()) fail(ErrorCode::DegenerateInput, "no comparison rows to report");
  r.summary = tables_json(rows, o.delta_threshold, o.rel_threshold);

  if (!o.biases.empty()) {
    std::map<std::string, double> mean_delta;
    for (const auto& a : stats::aggregate(rows, stats::GroupBy::Model)) mean_delta[a.group_key] = a.mean_delta;
    std::vector<std::pair<double, double>> pairs;
    json used = json::array();
    for (const auto& b : o.biases) {
      const auto bias = store::read_bias(b);
      const auto it = mean_delta.find(bias.model_id);
      if (it == mean_delta.end()) {
        progress("no comparison rows for model " + bias.model_id);
        continue;
      }
      pairs.emplace_back(bias.norm, it->second);
      used.push_back({{"modelId", bias.model_id}, {"muNorm", store::round9(bias.norm)}, {"meanDelta", it->second}});
    }
    const auto corr = stats::correlation_report(pairs);
    write_text(r, under(g, o.correlation_out), corr.csv);
    r.summary["correlation"] = {{"spearman", corr.spearman}, {"models", used}};
  }
  write_json(r, under(g, o.out), r.summary);
  return r;
}

// ------------------------------------------------------------------- simulate

struct SimulateOpts {
  sim::SimConfig cfg;
  std::string mode = "exact";
  std::vector<double> sweep_eps{1e-3, 3e-3, 1e-2, 3e-2};
  std::string out = "sim.json";
  std::string sweep_out = "sim_sweep.csv";
};

json sim_json(const sim::SimResult& s, double eps) {
  return {{"meanGapR1", s.mean_gap_r1}, {"meanGapR2", s.mean_gap_r2}, {"meanAngleR1", s.mean_angle_r1},
          {"meanAngleR2", s.mean_angle_r2}, {"maxGapR1", s.max_gap_r1}, {"angleGapStderr", s.angle_gap_stderr},
          {"gapR2OverEpsSquared", s.mean_gap_r2 / (eps * eps)}, {"trials", s.trials}};
}

Outcome simulate(const Global& g, SimulateOpts o) {
  Outcome r;
  if (o.mode == "exact") o.cfg.mode = sim::Orthogonality::Exact;
  else if (o.mode == "relaxed") o.cfg.mode = sim::Orthogonality::Relaxed;
  else fail(ErrorCode::InvalidConfig, "--mode must be exact or relaxed");
  o.cfg.seed = g.seed;
  const auto& c = o.cfg;
  r.config = {{"dim", c.dim}, {"muNorm", c.mu_norm}, {"epsNorm", c.eps_norm}, {"epsParallelFraction",
              c.eps_parallel_fraction}, {"signalNorm", c.signal_norm}, {"trials", c.trials}, {"mode", o.mode},
              {"sweepEps", o.sweep_eps}, {"out", o.out}, {"sweepOut", o.sweep_out}};

  progress("simulating " + std::to_string(c.trials) + " trials at dim " + std::to_string(c.dim));
  const auto res = sim::run_sim(c, g.par);
  r.summary = sim_json(res, c.eps_norm);

  if (!o.sweep_eps.empty()) {
    const auto points = sim::sweep_eps(c, o.sweep_eps, g.par);
    std::vector<csv::Row> rows;
    std::vector<double> xs, ys;
    json sweep = json::array();
    for (const auto& p : points) {
      const auto& s = p.result;
      rows.push_back({csv::format_number(p.eps_norm), csv::format_number(s.mean_gap_r1),
                      csv::format_number(s.mean_gap_r2), csv::format_number(s.mean_angle_r1),
                      csv::format_number(s.mean_angle_r2), csv::format_number(s.angle_gap_stderr),
                      csv::format_number(s.mean_gap_r2 / (p.eps_norm * p.eps_norm))});
      xs.push_back(p.eps_norm);
      ys.push_back(s.mean_gap_r2);
      json pj = sim_json(s, p.eps_norm);
      pj["epsNorm"] = p.eps_norm;
      sweep.push_back(pj);
    }
    write_text(r, under(g, o.sweep_out),
               csv::write({"epsNorm", "meanGapR1", "meanGapR2", "meanAngleR1", "meanAngleR2", "angleGapStderr",
                           "gapR2OverEpsSquared"},
                          rows));
    r.summary["sweep"] = sweep;
    try {
      r.summary["slopeGapR2"] = sim::loglog_slope(xs, ys);
    } catch (const Error&) {
      r.summary["slopeGapR2"] = nullptr;
    }
  }
  write_json(r, under(g, o.out), r.summary);
  return r;
}

// ---------------------------------------------------------------------- synth

struct SynthOpts {
  synth::SynthConfig cfg;
  std::string task_type = "retrieval";
};

Outcome synthesize(const Global& g, SynthOpts o) {
  Outcome r;
  auto& c = o.cfg;
  c.task_type = parse_task_type(o.task_type);
  c.seed = g.seed;
  r.config = {{"dim", c.dim}, {"clusters", c.num_clusters}, {"itemsPerCluster", c.items_per_cluster},
              {"noise", c.noise_scale}, {"biasNorm", c.bias_norm}, {"taskType", o.task_type}};
  progress("generating " + std::to_string(c.num_clusters * c.items_per_cluster) + " items");
  const auto b = synth::generate(c);
  const auto halves = synth::split_halves(b.biased_signals.count());
  const auto est = b.biased_signals.select(halves.estimation);

  std::vector<std::string> labels;
  for (std::size_t i : halves.evaluation) labels.push_back(b.labels[i]);
  const auto items = b.biased_signals.select(halves.evaluation);
  const auto clean = b.clean_signals.select(halves.evaluation);
  const bool bitext = c.task_type == TaskType::Bitext;
  EmbeddingMatrix tr, clean_tr;
  if (bitext) {
    tr = b.biased_translations.select(halves.evaluation);
    clean_tr = b.clean_translations.select(halves.evaluation);
  }
  const std::string id = "synth-" + std::string(to_string(c.task_type));
  auto biased_ds = synth::build_task(c.task_type, id, items, clean, labels, bitext ? &tr : nullptr);
  auto clean_ds = synth::build_task(c.task_type, id, clean, clean, labels, bitext ? &clean_tr : nullptr);

  const fs::path root(g.out_dir);
  auto emit = [&](const EmbeddingMatrix& m, const std::string& name) {
    store::write_embeddings(m, root / name);
    r.outputs.push_back(store::sidecar_path(root / name).string());
    r.outputs.push_back((root / name).string());
  };
  emit(est, "estimation.emb");
  emit(b.clean_signals, "clean_signals.emb");
  emit(b.biased_signals, "biased_signals.emb");
  r.outputs.push_back(store::write_task_dataset(biased_ds, root / "biased").string());
  r.outputs.push_back(store::write_task_dataset(clean_ds, root / "clean").string());

  json truth = {{"biasNorm", c.bias_norm}, {"vector", json::array()}};
  for (double x : b.true_bias) truth["vector"].push_back(store::round9(x));
  write_json(r, root / "true_bias.json", truth);

  r.summary = {{"taskId", id}, {"items", b.biased_signals.count()}, {"estimationRows", est.count()},
               {"evaluationRows", items.count()}, {"estimationFingerprint", est.fingerprint().hex()},
               {"outputs", r.outputs}};
  return r;
}

// ---------------------------------------------------------------------- sweep

struct SweepOpts {
  synth::SynthConfig cfg;
  std::string task_type = "retrieval";
  std::vector<double> bias_norms{0.0, 0.2, 0.4, 0.6, 0.8};
  std::size_t seeds = 20;
  std::vector<std::string> methods{"identity", "r1", "r2"};
  std::string out = "sweep.csv";
  std::string summary_out = "sweep.json";
};

Outcome sweep(const Global& g, SweepOpts o) {
  Outcome r;
  auto& c = o.cfg;
  c.task_type = parse_task_type(o.task_type);
  c.seed = g.seed;
  r.config = {{"dim", c.dim}, {"clusters", c.num_clusters}, {"itemsPerCluster", c.items_per_cluster},
              {"noise", c.noise_scale}, {"taskType", o.task_type}, {"biasNorms", o.bias_norms}, {"seeds", o.seeds},
              {"methods", o.methods}, {"out", o.out}, {"summaryOut", o.summary_out}};
  progress("sweeping " + std::to_string(o.bias_norms.size() * o.seeds) + " cells");
  const auto t = synth::sweep_bias(c, o.bias_norms, o.seeds, parse_methods(o.methods), g.par);

  std::vector<csv::Row> rows;
  for (const auto& row : t.rows)
    rows.push_back({csv::format_number(row.bias_norm), std::to_string(row.seed), std::string(to_string(row.method)),
                    csv::format_number(row.score), csv::format_number(row.delta)});
  write_text(r, under(g, o.out), csv::write({"biasNorm", "seed", "method", "score", "delta"}, rows));

  json summary = json::array();
  for (const auto& s : t.summary)
    summary.push_back({{"biasNorm", s.bias_norm}, {"method", to_string(s.method)}, {"meanScore", s.mean_score},
                       {"meanDelta", s.mean_delta}, {"meanSigma", s.mean_sigma}, {"meanMuNorm", s.mean_mu_norm}});
  r.summary = {{"summary", summary},
               {"spearmanR2", std::isnan(t.spearman_r2) ? json(nullptr) : json(t.spearman_r2)}};
  write_json(r, under(g, o.summary_out), r.summary);
  return r;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mean-bias estimation and embedding renormalization toolkit", "embrenorm"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.fallthrough();

  Global g;
  app.add_option("--seed", g.seed, "Master seed")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads (default: EMBRENORM_THREADS, then cores)");
  app.add_option("--out-dir", g.out_dir, "Directory for all outputs")->capture_default_str();
  app.add_flag("--json", g.json_summary, "Print the summary JSON on stdout");

  std::function<Outcome()> run;

  PrepOpts prep;
  auto* cmd = app.add_subcommand("prep-corpus", "Sample sentences from text or JSON-lines files");
  cmd->add_option("--input", prep.inputs, "Input file (repeatable)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--size", prep.size)->capture_default_str();
  cmd->add_option("--min-len", prep.min_len)->capture_default_str();
  cmd->add_option("--max-len", prep.max_len)->capture_default_str();
  cmd->add_option("--out", prep.out)->capture_default_str();
  cmd->callback([&] { run = [&] { return prep_corpus(g, prep); }; });

  EstimateOpts est;
  cmd = app.add_subcommand("estimate-mean", "Estimate the mean embedding of a corpus");
  cmd->add_option("--embeddings", est.embeddings)->required()->check(CLI::ExistingFile);
  cmd->add_option("--model-id", est.model_id)->required();
  auto* fp_opt = cmd->add_option("--corpus-fingerprint", est.corpus_fingerprint, "Hex SHA-256 of the corpus");
  cmd->add_option("--corpus-manifest", est.corpus_manifest, "Take the fingerprint from a prep-corpus manifest")
      ->excludes(fp_opt)
      ->check(CLI::ExistingFile);
  cmd->add_option("--out", est.out)->capture_default_str();
  cmd->callback([&] { run = [&] { return estimate(g, est); }; });

  ApplyOpts ap;
  cmd = app.add_subcommand("apply", "Renormalize an embedding file");
  cmd->add_option("--embeddings", ap.embeddings)->required()->check(CLI::ExistingFile);
  cmd->add_option("--bias", ap.bias)->required()->check(CLI::ExistingFile);
  cmd->add_option("--method", ap.method, "identity|r1|r2")->capture_default_str();
  cmd->add_option("--policy", ap.policy, "drop|keep-raw|fail")->capture_default_str();
  cmd->add_option("--out", ap.out)->required();
  cmd->callback([&] { run = [&] { return apply(g, ap); }; });

  EvalOpts ev;
  cmd = app.add_subcommand("eval", "Score task files under each method");
  cmd->add_option("--tasks", ev.tasks, "Task JSON files or directories")->required();
  cmd->add_option("--bias", ev.bias)->required()->check(CLI::ExistingFile);
  cmd->add_option("--methods", ev.methods)->delimiter(',')->capture_default_str();
  cmd->add_option("--policy", ev.policy)->capture_default_str();
  cmd->add_option("--budget-ms", ev.budget_ms, "Per-task wall-clock budget (0 = none)");
  cmd->add_option("--out", ev.out)->capture_default_str();
  cmd->callback([&] { run = [&] { return eval(g, ev); }; });

  CompareOpts cmp;
  cmd = app.add_subcommand("compare", "Compare two arms of run records");
  cmd->add_option("--baseline", cmp.baseline, "Baseline runs.jsonl")->required()->check(CLI::ExistingFile);
  cmd->add_option("--treated", cmp.treated, "Treated runs.jsonl (default: the baseline file)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--baseline-method", cmp.baseline_method)->capture_default_str();
  cmd->add_option("--treated-method", cmp.treated_method)->capture_default_str();
  cmd->add_flag("--combined-sigma", cmp.combined_sigma, "Divide by sqrt(sb^2 + st^2) instead of sb");
  cmd->add_option("--delta-threshold", cmp.delta_threshold)->capture_default_str();
  cmd->add_option("--rel-threshold", cmp.rel_threshold)->capture_default_str();
  cmd->add_option("--out", cmp.out)->capture_default_str();
  cmd->add_option("--summary-out", cmp.summary_out)->capture_default_str();
  cmd->callback([&] { run = [&] { return compare(g, cmp); }; });

  ReportOpts rep;
  cmd = app.add_subcommand("report", "Aggregate comparison CSVs into summary tables");
  cmd->add_option("--comparison", rep.comparisons)->required()->check(CLI::ExistingFile);
  cmd->add_option("--bias", rep.biases, "Bias files for the mu-norm correlation")->check(CLI::ExistingFile);
  cmd->add_option("--delta-threshold", rep.delta_threshold)->capture_default_str();
  cmd->add_option("--rel-threshold", rep.rel_threshold)->capture_default_str();
  cmd->add_option("--out", rep.out)->capture_default_str();
  cmd->add_option("--correlation-out", rep.correlation_out)->capture_default_str();
  cmd->callback([&] { run = [&] { return report(g, rep); }; });

  SimulateOpts so;
  cmd = app.add_subcommand("simulate", "Monte-Carlo error propagation for R1 and R2");
  cmd->add_option("--dim", so.cfg.dim)->capture_default_str();
  cmd->add_option("--mu-norm", so.cfg.mu_norm)->capture_default_str();
  cmd->add_option("--eps-norm", so.cfg.eps_norm)->capture_default_str();
  cmd->add_option("--fraction", so.cfg.eps_parallel_fraction, "Parallel share of the estimation error")
      ->capture_default_str();
  cmd->add_option("--signal-norm", so.cfg.signal_norm)->capture_default_str();
  cmd->add_option("--trials", so.cfg.trials)->capture_default_str();
  cmd->add_option("--mode", so.mode, "exact|relaxed")->capture_default_str();
  cmd->add_option("--sweep-eps", so.sweep_eps)->delimiter(',')->capture_default_str();
  cmd->add_option("--out", so.out)->capture_default_str();
  cmd->add_option("--sweep-out", so.sweep_out)->capture_default_str();
  cmd->callback([&] { run = [&] { return simulate(g, so); }; });

  SynthOpts sy;
  cmd = app.add_subcommand("synth", "Write a synthetic biased task bundle");
  cmd->add_option("--dim", sy.cfg.dim)->capture_default_str();
  cmd->add_option("--clusters", sy.cfg.num_clusters)->capture_default_str();
  cmd->add_option("--items", sy.cfg.items_per_cluster, "Items per cluster")->capture_default_str();
  cmd->add_option("--noise", sy.cfg.noise_scale)->capture_default_str();
  cmd->add_option("--bias-norm", sy.cfg.bias_norm)->capture_default_str();
  cmd->add_option("--task-type", sy.task_type)->capture_default_str();
  cmd->callback([&] { run = [&] { return synthesize(g, sy); }; });

  SweepOpts sw;
  cmd = app.add_subcommand("sweep", "Bias-norm sweep over synthetic tasks");
  cmd->add_option("--dim", sw.cfg.dim)->capture_default_str();
  cmd->add_option("--clusters", sw.cfg.num_clusters)->capture_default_str();
  cmd->add_option("--items", sw.cfg.items_per_cluster, "Items per cluster")->capture_default_str();
  cmd->add_option("--noise", sw.cfg.noise_scale)->capture_default_str();
  cmd->add_option("--task-type", sw.task_type)->capture_default_str();
  cmd->add_option("--bias-norms", sw.bias_norms)->delimiter(',')->capture_default_str();
  cmd->add_option("--seeds", sw.seeds)->capture_default_str();
  cmd->add_option("--methods", sw.methods)->delimiter(',')->capture_default_str();
  cmd->add_option("--out", sw.out)->capture_default_str();
  cmd->add_option("--summary-out", sw.summary_out)->capture_default_str();
  cmd->callback([&] { run = [&] { return sweep(g, sw); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  const std::string started = utc_stamp();
  const auto t0 = std::chrono::steady_clock::now();
  g.par = Parallelism::resolve(g.threads);
  const std::string sub = app.get_subcommands().front()->get_name();

  Outcome outcome;
  std::string error;
  try {
    fs::create_directories(g.out_dir);
    outcome = run();
  } catch (const std::exception& e) {
    error = e.what();
    outcome.exit_code = 1;
    std::cerr << "error: " << error << "\n";
  }
  const auto ms =
      std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0).count();

  json manifest = {{"tool", "embrenorm"},
                   {"version", kVersion},
                   {"subcommand", sub},
                   {"argv", std::vector<std::string>(argv, argv + argc)},
                   {"global", {{"seed", g.seed}, {"threads", g.par.threads}, {"outDir", g.out_dir},
                               {"json", g.json_summary}}},
                   {"config", outcome.config},
                   {"startedAtUtc", started},
                   {"finishedAtUtc", utc_stamp()},
                   {"wallClockMs", ms},
                   {"timings", outcome.timings},
                   {"outputs", outcome.outputs},
                   {"exitCode", outcome.exit_code}};
  if (!error.empty()) manifest["error"] = error;
  try {
    store::write_file_atomic(fs::path(g.out_dir) / (sub + ".manifest.json"), manifest.dump(2) + "\n");
  } catch (const std::exception& e) {
    std::cerr << "error: could not write manifest: " << e.what() << "\n";
    return 1;
  }

  if (g.json_summary && error.empty()) std::cout << outcome.summary.dump(2) << "\n";
  progress(sub + " finished in " + std::to_string(ms) + " ms");
  return outcome.exit_code;
}
