#include "app.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "manifest.hpp"
#include "opd/calibrate.hpp"
#include "opd/errors.hpp"
#include "opd/hashing.hpp"
#include "opd/pipeline.hpp"

namespace opd::cli {
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string manifest;
};

/// How a command is being run: normally, or replayed from a manifest with the
/// recorded configuration.
struct Mode {
  std::optional<std::string> config_text;
  bool write_manifest = true;
};

/// Inputs and outputs of one run, collected for its manifest.
struct Run {
  RunConfig config;
  std::vector<fs::path> inputs;
  std::vector<fs::path> outputs;
  /// The manifest goes next to this path, or inside it for a directory.
  fs::path primary;
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

RunConfig load_config(const Common& common, const Mode& mode) {
  RunConfig c = mode.config_text ? RunConfig::parse(*mode.config_text) : RunConfig::load(common.config);
  if (common.seed) c.seed = *common.seed;
  c.validate();
  return c;
}

void finish(const std::string& command, const std::vector<std::string>& args, const Common& common,
            const Mode& mode, const Run& run) {
  if (!mode.write_manifest) return;
  Manifest m;
  m.command = command;
  m.args = args;
  m.cwd = fs::current_path();
  m.seed = run.config.seed;
  m.config_text = run.config.to_text();
  m.config_hash = run.config.hash();
  for (const auto& p : run.inputs) m.inputs.push_back(digest(p));
  for (const auto& p : run.outputs) m.outputs.push_back(digest(p));
  fs::path path = common.manifest;
  if (path.empty()) {
    path = fs::is_directory(run.primary) ? run.primary / "manifest.json"
                                         : fs::path(run.primary.string() + ".manifest.json");
  }
  m.save(path);
}

struct Models {
  std::optional<BaseModel> base;
  std::optional<Reranker> reranker;
};

Models load_models(Run& run, const Workspace& ws, const std::string& model, const std::string& reranker) {
  Models m;
  m.base.emplace(BaseModel::load(model, ws.features.vocab, ws.data.labels));
  run.inputs.emplace_back(model);
  if (!reranker.empty()) {
    m.reranker.emplace(Reranker::load(reranker, ws.data.labels, ws.features.modalities));
    run.inputs.emplace_back(reranker);
  }
  return m;
}

std::vector<PredictionRecord> predict(const Models& m, std::span<const Example> examples) {
  return m.reranker ? predict_records(*m.base, *m.reranker, examples) : predict_records(*m.base, examples);
}

std::string model_name(const Models& m) {
  if (m.reranker) return "OPD-Reranker";
  return m.base->config().architecture == Architecture::kCaml ? "CAML" : "LAAT";
}

Workspace open_workspace(Run& run, const std::string& dir) {
  for (const auto& p : workspace_inputs(dir)) run.inputs.push_back(p);
  return load_workspace(dir, run.config);
}

EpochCallback progress(const char* what) {
  return [what](const EpochRecord& e) {
    std::cerr << fmt::format("{} epoch {}: loss {:.5f} dev R@5 {:.4f} dev iF1 {:.4f}\n", what, e.epoch, e.loss,
                             e.dev_recall_at_5, e.dev_instance_f1);
  };
}

// ---------------------------------------------------------------------------

struct Options {
  Common common;
  std::string in, out, data, model, reranker, base, history, calibrated, split = "test", breakdown, ece_out;
  std::size_t k = 5;
  std::vector<double> max_fp;
  std::string manifest_in;
};

void gen_corpus(Run& run, const Options& o) {
  const GeneratedCorpus g = generate_corpus(corpus_config(run.config));
  write_encounters(o.out, g.encounters);
  run.outputs.emplace_back(o.out);
  std::cout << fmt::format("{} encounters, {} patients -> {}\n", g.encounters.size(), run.config.corpus.n_patients,
                           o.out);
}

void preprocess(Run& run, const Options& o) {
  run.inputs.emplace_back(o.in);
  const auto corpus = read_encounters(o.in);
  const PreparedData data = prepare_corpus(run.config, corpus);
  const FeatureSet features = build_features(data, run.config.min_token_count, run.config.max_tokens);
  run.outputs = write_prepared(o.out, data, features);
  std::cout << data.report.to_text();
}

void train_base(Run& run, const Options& o) {
  const Workspace ws = open_workspace(run, o.data);
  BaseModel model(model_config(run.config, ws.features.vocab.size(), ws.data.labels.size()));
  const TrainHistory h = train(model, ws.features.train, ws.features.dev, train_config(run.config), progress("base"));
  model.save(o.out, ws.features.vocab, ws.data.labels);
  run.outputs.emplace_back(o.out);
  if (!o.history.empty()) {
    write_text(o.history, h.to_csv());
    run.outputs.emplace_back(o.history);
  }
  std::cout << fmt::format("best epoch {} of {}\n", h.best_epoch, h.epochs.size());
}

void train_rr(Run& run, const Options& o) {
  const Workspace ws = open_workspace(run, o.data);
  const Models m = load_models(run, ws, o.base, "");
  Reranker rr(reranker_config(run.config, *m.base, ws.features.modalities, ws.data.labels.size()));
  const TrainHistory h = train_reranker(*m.base, rr, ws.features.train, ws.features.dev,
                                        reranker_train_config(run.config), progress("reranker"));
  rr.save(o.out, ws.data.labels, ws.features.modalities);
  run.outputs.emplace_back(o.out);
  if (!o.history.empty()) {
    write_text(o.history, h.to_csv());
    run.outputs.emplace_back(o.history);
  }
  std::cout << fmt::format("best epoch {} of {}\n", h.best_epoch, h.epochs.size());
}

void evaluate_cmd(Run& run, const Options& o) {
  if (o.k == 0) throw ConfigError("--k must be positive");
  const Workspace ws = open_workspace(run, o.data);
  const Models m = load_models(run, ws, o.model, o.reranker);
  const auto records = predict(m, examples_of(ws, parse_split(o.split)));
  const double thr = run.config.train.decision_threshold;
  const std::vector<std::pair<std::string, MetricsReport>> rows = {{model_name(m), evaluate(records, o.k, thr)}};
  write_text(o.out, format_report_csv(rows));
  run.outputs.emplace_back(o.out);
  std::cout << format_report_text(rows);
  if (!o.breakdown.empty()) {
    const GroupKey key = parse_group_key(o.breakdown);
    const auto counts = label_train_counts(ws.data.labels);
    const auto groups = breakdown(records, key, counts, o.k, thr);
    fs::path path = fs::path(o.out).replace_extension("");
    path += fmt::format(".{}.csv", to_string(key));
    write_text(path, breakdown_csv(groups, o.k));
    run.outputs.push_back(path);
  }
}

void fractions_cmd(Run& run, const Options& o) {
  const Workspace ws = open_workspace(run, o.data);
  TrainConfig cfg = train_config(run.config);
  cfg.seed = stage_seed(run.config.seed, Stage::kFractions);
  const auto rows =
      data_fraction_experiment(run.config.fractions, ws.features.train, ws.features.dev,
                               examples_of(ws, parse_split(o.split)),
                               model_config(run.config, ws.features.vocab.size(), ws.data.labels.size()), cfg);
  write_text(o.out, fractions_csv(rows));
  run.outputs.emplace_back(o.out);
  std::cout << fractions_csv(rows);
}

void calibrate_cmd(Run& run, const Options& o) {
  const Workspace ws = open_workspace(run, o.data);
  const Models m = load_models(run, ws, o.model, o.reranker);
  const auto dev = predict(m, ws.features.dev);
  const IsotonicMap map = fit_isotonic(dev, ws.data.labels.size(), "dev");
  write_text(o.out, map.to_text());
  run.outputs.emplace_back(o.out);
  if (!o.ece_out.empty()) {
    const auto test = predict(m, ws.features.test);
    const auto dev_cal = map.apply(dev);
    const auto test_cal = map.apply(test);
    const std::size_t bins = run.config.ece_bins;
    std::string csv = "label,code,ece_dev_raw,ece_dev_calibrated,ece_test_raw,ece_test_calibrated\n";
    for (std::size_t l = 0; l < ws.data.labels.size(); ++l) {
      csv += fmt::format("{},{},{:.6f},{:.6f},{:.6f},{:.6f}\n", l, ws.data.labels.code(l), ece(dev, l, bins),
                         ece(dev_cal, l, bins), ece(test, l, bins), ece(test_cal, l, bins));
    }
    write_text(o.ece_out, csv);
    run.outputs.emplace_back(o.ece_out);
  }
}

void automate_cmd(Run& run, const Options& o) {
  if (o.max_fp.empty()) throw ConfigError("--max-fp needs at least one value");
  const Workspace ws = open_workspace(run, o.data);
  const Models m = load_models(run, ws, o.model, o.reranker);
  auto dev = predict(m, ws.features.dev);
  const auto test = predict(m, ws.features.test);
  std::optional<IsotonicMap> map;
  if (!o.calibrated.empty()) {
    map = IsotonicMap::from_text(read_text(o.calibrated));
    run.inputs.emplace_back(o.calibrated);
    if (map->curves.size() != ws.data.labels.size()) {
      throw ValidationError("calibration map covers a different label space");
    }
    dev = map->apply(dev);
  }
  std::vector<AutomationRow> rows;
  for (double fp : o.max_fp) {
    const ThresholdSearch s = search_thresholds(dev, fp, run.config.train.decision_threshold, "dev");
    const AutomationResult r = evaluate_automation(test, s.rule, map ? &*map : nullptr);
    rows.push_back({fp, map.has_value(), r.percent_of_possible(), r.fp_rate()});
    std::cout << fmt::format("max_fp {}: t_u {:.2f} t_l {:.2f}{} -> {} selected, {:.2f}% of {} exact matches, "
                             "fp rate {:.4f}\n",
                             fp, s.rule.t_upper, s.rule.t_lower, s.rule.selects_nothing ? " (selects nothing)" : "",
                             r.selected.size(), r.percent_of_possible(), r.possible, r.fp_rate());
  }
  write_text(o.out, automation_csv(rows));
  run.outputs.emplace_back(o.out);
}

void report_cmd(Run& run, const Options& o) {
  const Workspace ws = open_workspace(run, o.data);
  const fs::path dataset = fs::path(o.data) / data_files::kReportText;
  run.inputs.push_back(dataset);
  const Models m = load_models(run, ws, o.model, o.reranker);
  const double thr = run.config.train.decision_threshold;
  const std::size_t min_k = run.config.preprocess.min_label_count;

  std::string text = "Dataset\n\n" + read_text(dataset);
  text += "\nRecall@5 upper bounds\n\n";
  text += fmt::format("{:<16}{:>10}{:>10}\n", "", "dev", "test");
  std::vector<std::pair<std::string, MetricsReport>> rows;
  std::array<std::vector<PredictionRecord>, 2> records;
  for (int s = 0; s < 2; ++s) {
    const auto split = s == 0 ? SplitName::kDev : SplitName::kTest;
    records[s] = predict(m, examples_of(ws, split));
  }
  for (std::size_t min_count : {std::size_t{0}, min_k}) {
    text += fmt::format("{:<16}", min_count == 0 ? std::string("Oracle") : fmt::format("Oracle+Min{}", min_k));
    for (const auto& r : records) {
      text += fmt::format("{:>10.2f}",
                          100.0 * oracle_recall(r, ws.data.labels, ws.data.unfiltered_train_counts, min_count));
    }
    text += "\n";
  }
  for (int s = 0; s < 2; ++s) {
    rows.emplace_back(fmt::format("{} ({})", model_name(m), s == 0 ? "dev" : "test"), evaluate(records[s], 5, thr));
  }
  text += "\nScores\n\n" + format_report_text(rows);
  write_text(o.out, text);
  run.outputs.emplace_back(o.out);
  std::cout << text;
}

int dispatch(const std::vector<std::string>& args, const Mode& mode);

void replay_cmd(const Options& o) {
  const Manifest m = Manifest::load(o.manifest_in);
  const fs::path here = fs::current_path();
  fs::current_path(m.cwd);
  struct Restore {
    fs::path dir;
    ~Restore() { fs::current_path(dir); }
  } restore{here};
  for (const auto& in : m.inputs) {
    if (!fs::exists(in.path) || sha256_file(in.path) != in.sha256) {
      throw ValidationError("input changed since the manifest was written: " + in.path.string());
    }
  }
  Mode mode;
  mode.config_text = m.config_text;
  mode.write_manifest = false;
  if (const int rc = dispatch(m.args, mode); rc != kExitOk) {
    throw ValidationError(fmt::format("replayed command exited with {}", rc));
  }
  std::vector<std::string> changed;
  for (const auto& out : m.outputs) {
    if (!fs::exists(out.path) || sha256_file(out.path) != out.sha256) changed.push_back(out.path.string());
  }
  if (!changed.empty()) {
    std::string list;
    for (const auto& c : changed) list += (list.empty() ? "" : ", ") + c;
    throw ValidationError("replay differs from the manifest: " + list);
  }
  std::cout << fmt::format("replay of {} reproduced {} outputs\n", m.command, m.outputs.size());
}

int dispatch(const std::vector<std::string>& args, const Mode& mode) {
  CLI::App app{"Outpatient clinical coding laboratory"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.common.config, "run configuration (key = value)")->required();
    sub->add_option("--seed", o.common.seed, "override the configured root seed");
    sub->add_option("--manifest", o.common.manifest, "manifest path (default: next to the first output)");
  };
  auto data = [&](CLI::App* sub) { sub->add_option("--data", o.data, "preprocessed directory")->required(); };
  auto models = [&](CLI::App* sub) {
    sub->add_option("--model", o.model, "base model checkpoint")->required();
    sub->add_option("--reranker", o.reranker, "reranker checkpoint on top of --model");
  };

  using Handler = void (*)(Run&, const Options&);
  std::vector<std::pair<CLI::App*, Handler>> handlers;

  auto* gen = app.add_subcommand("gen-corpus", "generate the synthetic corpus");
  common(gen);
  gen->add_option("--out", o.out, "corpus file (JSON lines)")->required();
  handlers.emplace_back(gen, gen_corpus);

  auto* pre = app.add_subcommand("preprocess", "split, de-duplicate and filter a corpus");
  common(pre);
  pre->add_option("--in", o.in, "corpus file")->required();
  pre->add_option("--out", o.out, "output directory")->required();
  handlers.emplace_back(pre, preprocess);

  auto* tr = app.add_subcommand("train", "train the base model");
  common(tr);
  data(tr);
  tr->add_option("--out", o.out, "checkpoint")->required();
  tr->add_option("--history", o.history, "per-epoch CSV");
  handlers.emplace_back(tr, train_base);

  auto* rr = app.add_subcommand("train-reranker", "train the reranker on a frozen base model");
  common(rr);
  data(rr);
  rr->add_option("--base", o.base, "base model checkpoint")->required();
  rr->add_option("--out", o.out, "checkpoint")->required();
  rr->add_option("--history", o.history, "per-epoch CSV");
  handlers.emplace_back(rr, train_rr);

  auto* ev = app.add_subcommand("evaluate", "score a model on dev or test");
  common(ev);
  data(ev);
  models(ev);
  ev->add_option("--split", o.split, "dev or test")->capture_default_str();
  ev->add_option("--k", o.k, "cut-off for Recall@k")->capture_default_str();
  ev->add_option("--breakdown", o.breakdown, "dept, label_frequency or first_visit");
  ev->add_option("--out", o.out, "metrics CSV")->required();
  handlers.emplace_back(ev, evaluate_cmd);

  auto* fr = app.add_subcommand("fractions", "data-fraction experiment");
  common(fr);
  data(fr);
  fr->add_option("--split", o.split, "evaluation split")->capture_default_str();
  fr->add_option("--out", o.out, "CSV")->required();
  handlers.emplace_back(fr, fractions_cmd);

  auto* cal = app.add_subcommand("calibrate", "fit label-wise isotonic calibration on dev");
  common(cal);
  data(cal);
  models(cal);
  cal->add_option("--out", o.out, "calibration map")->required();
  cal->add_option("--ece-out", o.ece_out, "per-label ECE before/after on dev and test");
  handlers.emplace_back(cal, calibrate_cmd);

  auto* au = app.add_subcommand("automate", "exact-match automation under a false-positive budget");
  common(au);
  data(au);
  models(au);
  au->add_option("--max-fp", o.max_fp, "budget(s), comma separated")->required()->delimiter(',');
  au->add_option("--calibrated", o.calibrated, "calibration map applied before thresholding");
  au->add_option("--out", o.out, "CSV")->required();
  handlers.emplace_back(au, automate_cmd);

  auto* rep = app.add_subcommand("report", "dataset, upper-bound and score tables");
  common(rep);
  data(rep);
  models(rep);
  rep->add_option("--out", o.out, "text report")->required();
  handlers.emplace_back(rep, report_cmd);

  auto* pc = app.add_subcommand("print-config", "print the normalised configuration");
  pc->add_option("--config", o.common.config, "run configuration; defaults when omitted");

  auto* rp = app.add_subcommand("replay", "re-run a command from its manifest and compare outputs");
  rp->add_option("--manifest", o.manifest_in, "manifest file")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << "\n";
    return kExitUsage;
  }

  if (pc->parsed()) {
    const RunConfig c = o.common.config.empty() ? RunConfig{} : RunConfig::load(o.common.config);
    c.validate();
    std::cout << c.to_text();
    return kExitOk;
  }
  if (rp->parsed()) {
    replay_cmd(o);
    return kExitOk;
  }
  for (const auto& [sub, handler] : handlers) {
    if (!sub->parsed()) continue;
    Run run;
    run.config = load_config(o.common, mode);
    run.primary = o.out;
    handler(run, o);
    finish(sub->get_name(), args, o.common, mode, run);
    return kExitOk;
  }
  return kExitUsage;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  try {
    return dispatch(args, Mode{});
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.category() << ": " << e.what() << "\n";
    return kExitNumeric;
  } catch (const Error& e) {
    std::cerr << "error: " << e.category() << ": " << e.what() << "\n";
    return kExitValidation;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: io: " << e.what() << "\n";
    return kExitValidation;
  }
}

}  // namespace opd::cli
