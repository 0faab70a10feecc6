#include "commands.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>

#include "CLI11.hpp"
#include "good/embedkit.hpp"
#include "good/metrics.hpp"
#include "good/scoring.hpp"
#include "good/theory.hpp"
#include "good/trainer.hpp"
#include "json.hpp"

namespace good::cli {
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tracks files written by a command; removes them unless commit() is reached.
class OutputGuard {
 public:
  OutputGuard() = default;
  OutputGuard(const OutputGuard&) = delete;
  OutputGuard& operator=(const OutputGuard&) = delete;
  ~OutputGuard() {
    if (committed_) return;
    std::error_code ec;
    for (const auto& p : paths_) fs::remove(p, ec);
  }

  fs::path add(fs::path p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    paths_.push_back(std::move(p));
    return paths_.back();
  }
  const std::vector<fs::path>& paths() const { return paths_; }
  void commit() { committed_ = true; }

 private:
  std::vector<fs::path> paths_;
  bool committed_ = false;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("short write to " + path.string());
}

/// Command, resolved config, input/output digests, tool version and seed.
void write_run_manifest(const fs::path& path, const std::string& command, const json& config,
                        const std::vector<std::string>& inputs, const OutputGuard& outputs, std::uint64_t seed) {
  json j;
  j["command"] = command;
  j["config"] = config;
  json in = json::object();
  for (const auto& p : inputs) in[p] = file_digest(p);
  j["inputs"] = in;
  json out = json::object();
  for (const auto& p : outputs.paths()) {
    if (p != path) out[p.string()] = file_digest(p.string());
  }
  j["outputs"] = out;
  j["tool_version"] = kToolVersion;
  j["seed"] = seed;
  write_text(path, j.dump(2) + "\n");
}

fs::path sibling(const fs::path& p, const std::string& suffix) { return fs::path(p.string() + suffix); }

// ---------------------------------------------------------------------------

struct TrainFlags {
  std::string train;
  std::string gkm;
  std::string init;
  std::string mode = "kde";
  std::string score = "mcm";
  TrainConfig cfg;
};

void add_train_flags(CLI::App* sub, TrainFlags& f) {
  sub->add_option("--train", f.train, "training split (GOOD file)")->required()->check(CLI::ExistingFile);
  sub->add_option("--gkm", f.gkm, "frozen general-knowledge bank (GPTB)")->check(CLI::ExistingFile);
  sub->add_option("--init", f.init, "initial bank (defaults to a copy of --gkm)")->check(CLI::ExistingFile);
  sub->add_option("--lambda", f.cfg.lambda, "regularization weight")->capture_default_str()->check(CLI::NonNegativeNumber);
  sub->add_option("--alpha", f.cfg.alpha, "uniform-OOD loss weight")->capture_default_str()->check(CLI::NonNegativeNumber);
  sub->add_option("--tau", f.cfg.tau, "temperature of the tuned bank")->capture_default_str()->check(CLI::PositiveNumber);
  sub->add_option("--top-k", f.cfg.top_k, "patch extraction rank cutoff K")->capture_default_str()->check(CLI::Range(1u, 1u << 30));
  sub->add_option("--lr", f.cfg.lr, "SGD learning rate")->capture_default_str()->check(CLI::PositiveNumber);
  sub->add_option("--epochs", f.cfg.epochs, "training epochs")->capture_default_str();
  sub->add_option("--batch", f.cfg.batch, "mini-batch size")->capture_default_str()->check(CLI::Range(1u, 1u << 30));
  sub->add_option("--shots", f.cfg.shots_per_class, "samples per class (0 = all)")->capture_default_str();
  sub->add_option("--seed", f.cfg.seed, "shot sampling and shuffle seed")->capture_default_str();
  sub->add_option("--mode", f.mode, "objective")->capture_default_str()->check(CLI::IsMember({"baseline", "reg", "kde"}));
  sub->add_option("--score", f.score, "OOD score")->capture_default_str()->check(CLI::IsMember({"mcm", "glmcm"}));
}

struct ResolvedTraining {
  EmbeddingSet train;
  std::optional<PrototypeBank> gkm;
  PrototypeBank init;
  TrainConfig cfg;
  std::vector<std::string> inputs;
};

ResolvedTraining resolve_training(const TrainFlags& f) {
  ResolvedTraining r;
  r.cfg = f.cfg;
  r.cfg.mode = parse_mode(f.mode);
  r.cfg.score_kind = parse_score_kind(f.score);
  if (f.gkm.empty() && r.cfg.mode != Mode::kBaseline)
    throw UsageError("--gkm is required in mode " + f.mode);
  if (f.gkm.empty() && f.init.empty()) throw UsageError("either --gkm or --init is required");
  r.train = load_embeddings(f.train);
  r.inputs.push_back(f.train);
  if (!f.gkm.empty()) {
    r.gkm = load_bank(f.gkm);
    r.inputs.push_back(f.gkm);
  }
  if (!f.init.empty()) {
    r.init = load_bank(f.init);
    r.inputs.push_back(f.init);
  } else {
    r.init = *r.gkm;
  }
  return r;
}

ReferenceHypothesis resolve_fstar(const std::string& fstar, const std::string& train_path,
                                  std::vector<std::string>& inputs) {
  if (fstar == "analytic") {
    const auto manifest = load_manifest(train_path);
    if (!manifest || !manifest->generator)
      throw UsageError("--fstar analytic needs a generator manifest next to " + train_path);
    inputs.push_back(manifest_path(train_path).string());
    return ReferenceHypothesis::analytic(*manifest->generator);
  }
  if (!fs::exists(fstar)) throw UsageError("--fstar: '" + fstar + "' is neither 'analytic' nor a bank file");
  inputs.push_back(fstar);
  return ReferenceHypothesis::from_bank(load_bank(fstar));
}

std::vector<double> parse_lambdas(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      throw UsageError("--lambdas: cannot parse '" + item + "'");
    }
    if (used != item.size() || !(v >= 0) || !std::isfinite(v)) throw UsageError("--lambdas: bad value '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw UsageError("--lambdas: empty list");
  return out;
}

// ---------------------------------------------------------------------------

int cmd_synth(const GeneratorSpec& spec, const std::string& out_dir, std::ostream& out) {
  spec.validate();
  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  OutputGuard guard;
  const auto bench = synth_generate(spec);

  std::vector<std::string> class_names;
  for (std::uint32_t c = 0; c < spec.classes; ++c) class_names.push_back("class_" + std::to_string(c));

  auto emit = [&](const EmbeddingSet& set, const std::string& split) {
    const fs::path path = guard.add(dir / (split + ".good"));
    save_embeddings(set, path);
    guard.add(manifest_path(path));
    save_manifest({split, class_names, spec}, path);
  };
  emit(bench.train, "train");
  emit(bench.test_id, "test_id");
  emit(bench.test_ood, "test_ood");
  save_bank(synthetic_gkm(spec, bench.means), guard.add(dir / "gkm.gptb"));

  json config;
  config["classes"] = spec.classes;
  config["dim"] = spec.dim;
  config["radius"] = spec.radius;
  config["sigma"] = spec.sigma;
  config["per_class"] = spec.samples_per_class;
  config["shift"] = spec.shift;
  config["ood"] = to_string(spec.ood_family);
  config["patches"] = spec.n_patches;
  config["gkm_noise"] = spec.gkm_noise;
  config["gkm_temperature"] = spec.gkm_temperature;
  const fs::path manifest = guard.add(dir / "run_manifest.json");
  write_run_manifest(manifest, "synth", config, {}, guard, spec.seed);
  guard.commit();
  out << "wrote " << dir.string() << "/{train,test_id,test_ood}.good and gkm.gptb\n";
  return 0;
}

int cmd_train(const TrainFlags& flags, const std::string& out_path, std::ostream& out, std::ostream& err) {
  auto r = resolve_training(flags);
  OutputGuard guard;
  const auto ckpt = train(r.train, r.gkm ? &*r.gkm : nullptr, r.init, r.cfg);
  for (const auto& w : ckpt.warnings) err << "warning: " << w << '\n';
  guard.add(out_path);
  guard.add(training_log_path(out_path));
  save_checkpoint(ckpt, out_path);
  const fs::path manifest = guard.add(sibling(out_path, ".run.json"));
  write_run_manifest(manifest, "train", json::parse(to_json(r.cfg)), r.inputs, guard, r.cfg.seed);
  guard.commit();
  const auto& last = ckpt.loss_history.empty() ? EpochLog{} : ckpt.loss_history.back();
  out << "trained " << ckpt.epoch << " epochs, final total loss " << last.total << " -> " << out_path << '\n';
  return 0;
}

int cmd_eval(const std::string& bank_path, const std::string& id_path, const std::string& ood_path,
             const std::string& score, const std::string& out_path, std::ostream& out) {
  const auto kind = parse_score_kind(score);
  const auto bank = load_bank(bank_path);
  const auto test_id = load_embeddings(id_path);
  const auto test_ood = load_embeddings(ood_path);
  if (kind == ScoreKind::kGlmcm && (!test_id.has_locals() || !test_ood.has_locals()))
    throw std::invalid_argument("--score glmcm needs local features in both test sets");
  OutputGuard guard;
  const auto text = to_json(evaluate(bank, test_id, test_ood, kind)) + "\n";
  write_text(guard.add(out_path), text);
  json config;
  config["score"] = score;
  const fs::path manifest = guard.add(sibling(out_path, ".run.json"));
  write_run_manifest(manifest, "eval", config, {bank_path, id_path, ood_path}, guard, 0);
  guard.commit();
  out << text;
  return 0;
}

struct BoundFlags {
  std::string bank, gkm, train, test_id, test_ood, fstar = "analytic", mode = "kde", out;
  double lambda = 0.3;
  std::uint32_t shots = 0;
  std::uint64_t seed = 0;
};

int cmd_bound(const BoundFlags& f, std::ostream& out) {
  std::vector<std::string> inputs{f.bank, f.gkm, f.train, f.test_id, f.test_ood};
  const auto fstar = resolve_fstar(f.fstar, f.train, inputs);
  const auto bank = load_bank(f.bank);
  const auto gkm = load_bank(f.gkm);
  const auto train_set = subsample_shots(load_embeddings(f.train), f.shots, f.seed);
  const auto test = concat(load_embeddings(f.test_id), load_embeddings(f.test_ood));
  const auto report = bound_report(bank, gkm, train_set, test, fstar, f.lambda, parse_mode(f.mode));

  OutputGuard guard;
  const auto text = to_json(report) + "\n";
  write_text(guard.add(f.out), text);
  json config;
  config["fstar"] = fstar.describe();
  config["shots"] = f.shots;
  const fs::path manifest = guard.add(sibling(f.out, ".run.json"));
  write_run_manifest(manifest, "bound", config, inputs, guard, f.seed);
  guard.commit();
  out << text;
  return 0;
}

int cmd_sweep(const TrainFlags& flags, const std::string& id_path, const std::string& ood_path,
              const std::string& lambdas_text, const std::string& fstar_arg, const std::string& out_path,
              std::ostream& out, std::ostream& err) {
  const auto lambdas = parse_lambdas(lambdas_text);
  auto r = resolve_training(flags);
  if (!r.gkm) throw UsageError("sweep needs --gkm");
  const auto test_id = load_embeddings(id_path);
  const auto test_ood = load_embeddings(ood_path);
  r.inputs.push_back(id_path);
  r.inputs.push_back(ood_path);
  const auto fstar = resolve_fstar(fstar_arg, flags.train, r.inputs);

  const auto rows = sweep(r.train, test_id, test_ood, *r.gkm, r.init, r.cfg, lambdas, fstar);
  for (const auto& row : rows)
    if (row.error) err << "lambda " << row.lambda << " failed: " << *row.error << '\n';

  OutputGuard guard;
  const auto csv = sweep_csv(rows);
  write_text(guard.add(out_path), csv);
  auto config = json::parse(to_json(r.cfg));
  config["lambdas"] = lambdas;
  config["fstar"] = fstar.describe();
  const fs::path manifest = guard.add(sibling(out_path, ".run.json"));
  write_run_manifest(manifest, "sweep", config, r.inputs, guard, r.cfg.seed);
  guard.commit();
  out << csv;
  return 0;
}

}  // namespace

std::string file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path + " for digest");
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &len);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) {
    hex += kHex[md[i] >> 4];
    hex += kHex[md[i] & 15];
  }
  return hex;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Few-shot OOD detection workbench: prototype tuning against a frozen general-knowledge model"};
  app.name("good");
  app.require_subcommand(1);

  GeneratorSpec spec;
  std::string ood_family = "near";
  std::string out_dir;
  auto* synth = app.add_subcommand("synth", "generate a seeded synthetic benchmark");
  synth->add_option("--classes", spec.classes, "class count C (>= 2)")->capture_default_str()->check(CLI::Range(2u, 1u << 20));
  synth->add_option("--dim", spec.dim, "feature dimension (>= 2)")->capture_default_str()->check(CLI::Range(2u, 1u << 20));
  synth->add_option("--sigma", spec.sigma, "isotropic noise std")->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--radius", spec.radius, "norm of every class mean")->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--per-class", spec.samples_per_class, "samples per class per split")->capture_default_str()->check(CLI::Range(1u, 1u << 30));
  synth->add_option("--shift", spec.shift, "test-ID mean displacement")->capture_default_str()->check(CLI::NonNegativeNumber);
  synth->add_option("--ood", ood_family, "OOD family")->capture_default_str()->check(CLI::IsMember({"near", "far"}));
  synth->add_option("--seed", spec.seed, "generator seed")->capture_default_str();
  synth->add_option("--patches", spec.n_patches, "local patches per sample (0 = none)")->capture_default_str();
  synth->add_option("--gkm-noise", spec.gkm_noise, "relative perturbation of the GKM prototypes")->capture_default_str()->check(CLI::NonNegativeNumber);
  synth->add_option("--gkm-temperature", spec.gkm_temperature, "softening factor of the GKM logits")->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--out-dir", out_dir, "output directory")->required();

  TrainFlags train_flags;
  std::string train_out;
  auto* train_cmd = app.add_subcommand("train", "tune a prototype bank");
  add_train_flags(train_cmd, train_flags);
  train_cmd->add_option("--out", train_out, "output bank path (GPTB)")->required();

  std::string eval_bank, eval_id, eval_ood, eval_score = "mcm", eval_out;
  auto* eval_cmd = app.add_subcommand("eval", "FPR95 / AUROC / ID accuracy of a bank");
  eval_cmd->add_option("--bank", eval_bank)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--test-id", eval_id)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--test-ood", eval_ood)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--score", eval_score)->capture_default_str()->check(CLI::IsMember({"mcm", "glmcm"}));
  eval_cmd->add_option("--out", eval_out, "report path (JSON)")->required();

  BoundFlags bound_flags;
  auto* bound_cmd = app.add_subcommand("bound", "computable terms of the generalization bound");
  bound_cmd->add_option("--bank", bound_flags.bank)->required()->check(CLI::ExistingFile);
  bound_cmd->add_option("--gkm", bound_flags.gkm)->required()->check(CLI::ExistingFile);
  bound_cmd->add_option("--train", bound_flags.train)->required()->check(CLI::ExistingFile);
  bound_cmd->add_option("--test-id", bound_flags.test_id)->required()->check(CLI::ExistingFile);
  bound_cmd->add_option("--test-ood", bound_flags.test_ood)->required()->check(CLI::ExistingFile);
  bound_cmd->add_option("--fstar", bound_flags.fstar, "'analytic' or a reference bank file")->capture_default_str();
  bound_cmd->add_option("--lambda", bound_flags.lambda, "recorded lambda")->capture_default_str();
  bound_cmd->add_option("--mode", bound_flags.mode, "recorded mode")->capture_default_str()->check(CLI::IsMember({"baseline", "reg", "kde"}));
  bound_cmd->add_option("--shots", bound_flags.shots, "subsample train like training did (0 = all)")->capture_default_str();
  bound_cmd->add_option("--seed", bound_flags.seed, "seed of that subsample")->capture_default_str();
  bound_cmd->add_option("--out", bound_flags.out, "report path (JSON)")->required();

  TrainFlags sweep_flags;
  std::string sweep_id, sweep_ood, sweep_out, sweep_fstar = "analytic";
  std::string lambdas = "0,0.1,0.2,0.3,0.4,0.5";
  auto* sweep_cmd = app.add_subcommand("sweep", "train and evaluate one model per lambda");
  add_train_flags(sweep_cmd, sweep_flags);
  sweep_cmd->add_option("--test-id", sweep_id)->required()->check(CLI::ExistingFile);
  sweep_cmd->add_option("--test-ood", sweep_ood)->required()->check(CLI::ExistingFile);
  sweep_cmd->add_option("--lambdas", lambdas, "comma-separated lambda grid")->capture_default_str();
  sweep_cmd->add_option("--fstar", sweep_fstar, "'analytic' or a reference bank file")->capture_default_str();
  sweep_cmd->add_option("--out", sweep_out, "CSV path")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*synth) {
      spec.ood_family = parse_ood_family(ood_family);
      return cmd_synth(spec, out_dir, out);
    }
    if (*train_cmd) return cmd_train(train_flags, train_out, out, err);
    if (*eval_cmd) return cmd_eval(eval_bank, eval_id, eval_ood, eval_score, eval_out, out);
    if (*bound_cmd) return cmd_bound(bound_flags, out);
    if (*sweep_cmd) return cmd_sweep(sweep_flags, sweep_id, sweep_ood, lambdas, sweep_fstar, sweep_out, out, err);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace good::cli
