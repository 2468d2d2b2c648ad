#include "sectune/cli.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <functional>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <sstream>

#include "sectune/detector.hpp"
#include "sectune/evalharness.hpp"
#include "sectune/pipeline.hpp"
#include "sectune/synth.hpp"

namespace sectune::cli {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string utc_now() {
  std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

json metadata(const std::string& command, const std::string& hash) {
  return {{"command", command}, {"hash", hash}, {"created", utc_now()}};
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << j.dump(2) << '\n';
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

std::unique_ptr<Detector> detector_for(const std::string& id) {
  try {
    return make_detector(id);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

json opt_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string percent(const json& v) {
  if (v.is_null()) return "n/a";
  std::ostringstream out;
  out << std::fixed << std::setprecision(1) << v.get<double>();
  return out.str();
}

// --- evaluation shared by eval, study and sweep ---------------------------

struct EvalSetup {
  std::vector<Scenario> scenarios;
  std::vector<InstructionSample> probes;
  std::vector<PromptVariant> variants;
  int n = 100;
  double temperature = 0.4;
  int probe_n = 20;
  std::uint64_t seed = 0;
};

EvalSetup eval_setup(const RunConfig& cfg, std::vector<fs::path>& inputs) {
  EvalSetup e;
  const fs::path sp = cfg.path("eval", "scenarios");
  e.scenarios = load_scenarios(sp);
  inputs.push_back(sp);
  if (auto pp = cfg.optional_path("eval", "probes")) {
    e.probes = load_dataset(*pp).std_samples;
    inputs.push_back(*pp);
  }
  for (const auto& v : cfg.get<std::vector<std::string>>("eval", "variants", {"func_only"})) {
    try {
      e.variants.push_back(parse_variant(v));
    } catch (const std::invalid_argument& err) {
      throw UsageError(err.what());
    }
  }
  e.n = cfg.get<int>("eval", "n", 100);
  e.temperature = cfg.get<double>("eval", "temperature", 0.4);
  e.probe_n = cfg.get<int>("eval", "probe_n", 20);
  e.seed = cfg.seed();
  if (e.n < 1 || e.probe_n < 1) throw UsageError("eval.n and eval.probe_n must be at least 1");
  return e;
}

// {"variants": [{variant, security, undefined, scenarios}], "utility"}
json evaluate(const ModelState& m, const EvalSetup& e) {
  json variants = json::array();
  for (PromptVariant v : e.variants) {
    json rows = json::array();
    json undefined = json::array();
    std::vector<SecurityResult> results;
    for (const auto& s : e.scenarios) {
      SampleOptions opt{e.n, e.temperature, e.seed, v};
      SecurityResult r = run_scenario(m, s, opt);
      rows.push_back({{"scenario", s.id},
                      {"cwe", s.cwe},
                      {"language", s.language},
                      {"n_sampled", r.n_sampled},
                      {"n_valid", r.n_valid},
                      {"n_secure", r.n_secure},
                      {"rate", opt_number(r.rate)}});
      if (!r.rate) undefined.push_back(s.id);
      results.push_back(std::move(r));
    }
    std::optional<double> security;
    if (undefined.empty() && !results.empty()) security = security_rate(results);
    variants.push_back(
        {{"variant", variant_name(v)}, {"security", opt_number(security)}, {"undefined", undefined}, {"scenarios", rows}});
  }
  json out = {{"variants", variants}};
  out["utility"] = e.probes.empty()
                       ? json(nullptr)
                       : json(100.0 * utility_probe(m, e.probes, e.probe_n, e.temperature, Rng(e.seed).fork("utility").next()));
  return out;
}

json func_only_security(const json& eval) {
  for (const auto& v : eval.at("variants")) {
    if (v.at("variant") == "func_only") return v.at("security");
  }
  return eval.at("variants").at(0).at("security");
}

ModelState initial_model(const RunConfig& cfg, std::vector<fs::path>& inputs) {
  if (auto p = cfg.optional_path("train", "init_checkpoint")) {
    inputs.push_back(*p);
    return load_checkpoint(*p);
  }
  return ModelState::init(cfg.model(), Rng(cfg.seed()).fork("init").next());
}

std::vector<SecurityTriple> mine_triples(const RunConfig& cfg, std::vector<fs::path>& inputs, MineResult* full) {
  const fs::path corpus_path = cfg.path("pipeline", "corpus");
  inputs.push_back(corpus_path);
  FilterRules rules = default_rules();
  if (auto rp = cfg.optional_path("pipeline", "rules")) {
    rules = load_rules(*rp);
    inputs.push_back(*rp);
  }
  auto det = detector_for(cfg.get<std::string>("pipeline", "detector", "reference"));
  const std::string gen_id = cfg.get<std::string>("pipeline", "generator", "template");
  if (gen_id != "template") {
    throw UsageError("instruction generator '" + gen_id + "' is not available from the command line (use \"template\")");
  }
  TemplateGenerator gen;
  MineResult r = collect_dataset(load_corpus(corpus_path), *det, rules, gen);
  const int cap = cfg.get<int>("pipeline", "max_per_class", 0);
  Rng rng = Rng(cfg.seed()).fork("rebalance");
  r.triples = rebalance_clean(r.triples, cap > 0 ? static_cast<std::size_t>(cap) : std::numeric_limits<std::size_t>::max(), rng);
  r.funnel.triples = r.triples.size();
  if (full) *full = r;
  return r.triples;
}

json funnel_json(const Funnel& f) {
  return {{"input", f.input}, {"filtered", f.filtered}, {"analyzed", f.analyzed}, {"verified", f.verified}, {"triples", f.triples}};
}

double sven_identity_error(const TrainLog& log) {
  double worst = 0.0;
  for (const auto& s : log.steps) {
    if (!s.sven) continue;
    worst = std::max(worst, std::abs(s.loss - s.sven->weighted_sum()));
  }
  return worst;
}

std::string ascii_curve(const std::vector<double>& xs, const std::vector<double>& ys, const std::string& xlabel,
                        const std::string& ylabel) {
  constexpr int kW = 48, kH = 12;
  if (xs.empty()) return "";
  auto [xmin, xmax] = std::minmax_element(xs.begin(), xs.end());
  auto [ymin, ymax] = std::minmax_element(ys.begin(), ys.end());
  const double xs0 = *xmin, xs1 = *xmax > *xmin ? *xmax : *xmin + 1;
  const double ys0 = *ymin, ys1 = *ymax > *ymin ? *ymax : *ymin + 1;
  std::vector<std::string> grid(kH, std::string(kW, ' '));
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const int c = static_cast<int>(std::lround((xs[i] - xs0) / (xs1 - xs0) * (kW - 1)));
    const int r = static_cast<int>(std::lround((ys[i] - ys0) / (ys1 - ys0) * (kH - 1)));
    grid[kH - 1 - r][c] = static_cast<char>('1' + static_cast<int>(i % 9));
  }
  std::ostringstream out;
  out << std::fixed << std::setprecision(1);
  out << ylabel << " " << ys1 << "\n";
  for (const auto& row : grid) out << "  |" << row << "\n";
  out << "  +" << std::string(kW, '-') << "\n";
  out << ylabel << " " << ys0 << "   " << xlabel << " " << xs0 << " .. " << xs1 << "\n";
  return out.str();
}

}  // namespace

// --- config -----------------------------------------------------------------

RunConfig RunConfig::load(const fs::path& path, const std::vector<std::string>& overrides) {
  json j;
  try {
    j = json::parse(read_bytes(path));
  } catch (const json::exception& e) {
    throw UsageError("config " + path.string() + ": " + e.what());
  } catch (const std::runtime_error& e) {
    throw UsageError(e.what());
  }
  RunConfig cfg = from_json(std::move(j), fs::absolute(path).parent_path());
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw UsageError("override '" + o + "' is not key=value");
    cfg.set(o.substr(0, eq), o.substr(eq + 1));
  }
  return cfg;
}

RunConfig RunConfig::from_json(json j, const fs::path& base_dir) {
  if (!j.is_object()) throw UsageError("config must be a JSON object");
  RunConfig cfg;
  cfg.j_ = std::move(j);
  cfg.base_dir_ = base_dir;
  return cfg;
}

void RunConfig::set(const std::string& dotted_key, const std::string& value) {
  json v = json::parse(value, nullptr, false);
  if (v.is_discarded()) v = value;
  json* node = &j_;
  std::size_t start = 0;
  while (true) {
    const auto dot = dotted_key.find('.', start);
    const std::string part = dotted_key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw UsageError("bad config key '" + dotted_key + "'");
    if (!node->is_object()) *node = json::object();
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = std::move(v);
}

std::uint64_t RunConfig::seed() const {
  if (!j_.contains("seed")) return 0;
  try {
    return j_.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw UsageError(std::string("config field seed: ") + e.what());
  }
}

fs::path RunConfig::resolve(const fs::path& p) const { return p.is_absolute() ? p : (base_dir_ / p).lexically_normal(); }

fs::path RunConfig::out_dir() const {
  return resolve(j_.contains("out") ? fs::path(j_.at("out").get<std::string>()) : fs::path("runs"));
}

bool RunConfig::has(const std::string& section, const std::string& key) const {
  return j_.contains(section) && j_.at(section).is_object() && j_.at(section).contains(key) &&
         !j_.at(section).at(key).is_null();
}

std::optional<fs::path> RunConfig::optional_path(const std::string& section, const std::string& key) const {
  if (!has(section, key)) return std::nullopt;
  const json& v = j_.at(section).at(key);
  if (!v.is_string()) throw UsageError("config field " + section + "." + key + " must be a path string");
  return resolve(v.get<std::string>());
}

fs::path RunConfig::path(const std::string& section, const std::string& key) const {
  auto p = optional_path(section, key);
  if (!p) throw UsageError("config needs " + section + "." + key);
  return *p;
}

ModelConfig RunConfig::model() const {
  ModelConfig m;
  m.vocab_size = Tokenizer::mini_language().vocab_size();
  m.d_model = get<int>("model", "d_model", m.d_model);
  m.n_layers = get<int>("model", "n_layers", m.n_layers);
  m.n_heads = get<int>("model", "n_heads", m.n_heads);
  m.context = get<int>("model", "context", 128);
  try {
    m.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("model section: ") + e.what());
  }
  return m;
}

namespace {

TrainConfig train_fields(const RunConfig& c, const std::string& section, TrainConfig t) {
  t.epochs = c.get<int>(section, "epochs", t.epochs);
  t.learning_rate = c.get<double>(section, "learning_rate", t.learning_rate);
  t.grad_accum_steps = c.get<int>(section, "grad_accum_steps", t.grad_accum_steps);
  t.clip_norm = c.get<double>(section, "clip_norm", t.clip_norm);
  t.oversample_k = c.get<int>(section, "oversample_k", t.oversample_k);
  t.adam.weight_decay = c.get<double>(section, "weight_decay", t.adam.weight_decay);
  t.adam.beta1 = c.get<double>(section, "beta1", t.adam.beta1);
  t.adam.beta2 = c.get<double>(section, "beta2", t.adam.beta2);
  t.adam.eps = c.get<double>(section, "eps", t.adam.eps);
  return t;
}

TrainConfig checked(TrainConfig t) {
  try {
    t.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("train section: ") + e.what());
  }
  return t;
}

}  // namespace

TrainConfig RunConfig::train() const {
  TrainConfig t = train_fields(*this, "train", TrainConfig{});
  t.seed = Rng(seed()).fork("train").next();
  return checked(t);
}

TrainConfig RunConfig::pretrain() const {
  TrainConfig t = train_fields(*this, "pretrain", train_fields(*this, "train", TrainConfig{}));
  t.seed = Rng(seed()).fork("pretrain").next();
  return checked(t);
}

SvenConfig RunConfig::sven() const {
  SvenConfig s;
  s.kl_weight = get<double>("train", "kl_weight", 1.6);
  if (!(s.kl_weight >= 0)) throw UsageError("train.kl_weight must be non-negative");
  return s;
}

std::string content_hash(const std::string& command, const RunConfig& cfg, const std::vector<fs::path>& inputs) {
  std::uint64_t h = Rng::hash(command);
  auto mix = [&](const std::string& s) { h = Rng::hash(std::to_string(h) + "\n" + s); };
  std::function<void(json&)> scrub = [&](json& v) {
    if (v.is_object() || v.is_array()) {
      for (auto& child : v) scrub(child);
    } else if (v.is_string()) {
      std::error_code ec;
      if (!v.get<std::string>().empty() && fs::is_regular_file(cfg.resolve(v.get<std::string>()), ec)) v = "<file>";
    }
  };
  json doc = cfg.doc();
  doc.erase("out");
  scrub(doc);
  mix(doc.dump());
  for (const auto& p : inputs) mix(read_bytes(p));
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

json strip_metadata(json j) {
  if (j.is_object()) {
    j.erase("metadata");
    for (auto& [k, v] : j.items()) v = strip_metadata(v);
  } else if (j.is_array()) {
    for (auto& v : j) v = strip_metadata(v);
  }
  return j;
}

std::optional<double> fit_slope(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 2) return std::nullopt;
  const double n = static_cast<double>(xs.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i] / n;
    my += ys[i] / n;
  }
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  if (sxx <= 0) return std::nullopt;
  return sxy / sxx;
}

// --- subcommands ------------------------------------------------------------

Artifacts cmd_synth(const RunConfig& cfg, std::ostream& log) {
  synth::MiningSpec ms;
  ms.planted = cfg.get<int>("synth", "planted", ms.planted);
  ms.oversize = cfg.get<int>("synth", "oversize", ms.oversize);
  ms.irrelevant = cfg.get<int>("synth", "irrelevant", ms.irrelevant);
  synth::LabSpec ls;
  ls.pretrain_copies = cfg.get<int>("synth", "pretrain_copies", ls.pretrain_copies);
  ls.pretrain_vuln_fraction = cfg.get<double>("synth", "pretrain_vuln_fraction", ls.pretrain_vuln_fraction);
  ls.std_copies = cfg.get<int>("synth", "std_copies", ls.std_copies);
  ls.std_vuln_fraction = cfg.get<double>("synth", "std_vuln_fraction", ls.std_vuln_fraction);
  ls.held_out_scenarios = cfg.get<bool>("synth", "held_out_scenarios", ls.held_out_scenarios);

  const Rng root(cfg.seed());
  const synth::MiningCorpus mc = synth::mining_corpus(ms, root.fork("mining").next());
  const synth::LabData lab = synth::lab_data(ls, root.fork("lab").next());

  Artifacts a;
  auto place = [&](const std::string& key) {
    fs::path p = cfg.path("data", key);
    ensure_parent(p);
    a.files[key] = p;
    return p;
  };
  save_corpus(mc.commits, place("corpus"));
  save_dataset(Dataset{{}, mc.planted}, place("planted"));
  save_dataset(lab.pretrain, place("pretrain"));
  save_dataset(lab.standard, place("standard"));
  {
    std::ofstream out(place("scenarios"), std::ios::binary);
    write_scenarios(lab.scenarios, out);
  }
  save_dataset(Dataset{lab.probes, {}}, place("probes"));
  a.summary = {{"commits", mc.commits.size()},
               {"planted", mc.planted.size()},
               {"pretrain", lab.pretrain.size()},
               {"standard", lab.standard.size()},
               {"scenarios", lab.scenarios.size()},
               {"probes", lab.probes.size()}};
  log << "synth: " << mc.commits.size() << " commits (" << mc.planted.size() << " planted fixes), "
      << lab.pretrain.size() << " pretraining samples, " << lab.standard.size() << " instruction samples, "
      << lab.scenarios.size() << " scenarios, " << lab.probes.size() << " probes\n";
  return a;
}

Artifacts cmd_mine(const RunConfig& cfg, std::ostream& log) {
  std::vector<fs::path> inputs;
  MineResult r;
  mine_triples(cfg, inputs, &r);
  const std::string h = content_hash("mine", cfg, inputs);
  const fs::path out = cfg.out_dir();
  fs::create_directories(out);

  Artifacts a;
  a.files["dataset"] = out / ("dataset-" + h + ".jsonl");
  a.files["skips"] = out / ("skips-" + h + ".jsonl");
  a.files["meta"] = out / ("mine-" + h + ".json");
  save_dataset(Dataset{{}, r.triples}, a.files["dataset"]);
  {
    std::ofstream sk(a.files["skips"], std::ios::binary);
    write_skip_log(r.skips, sk);
  }
  std::map<std::string, int> reasons;
  for (const auto& s : r.skips) ++reasons[s.reason];
  a.summary = {{"kind", "mine"},
               {"funnel", funnel_json(r.funnel)},
               {"skip_reasons", reasons},
               {"dataset", a.files["dataset"].filename().string()},
               {"skips", a.files["skips"].filename().string()},
               {"metadata", metadata("mine", h)}};
  write_json(a.files["meta"], a.summary);
  const Funnel& f = r.funnel;
  log << "funnel: input " << f.input << " -> filtered " << f.filtered << " -> analyzed " << f.analyzed
      << " -> verified " << f.verified << " -> triples " << f.triples << "\n";
  for (const auto& [reason, n] : reasons) log << "  skipped " << reason << ": " << n << "\n";
  log << "dataset: " << a.files["dataset"].string() << "\n";
  return a;
}

Artifacts cmd_train(const RunConfig& cfg, std::ostream& log) {
  const std::string mode = cfg.get<std::string>("train", "mode", "safecoder");
  std::vector<fs::path> inputs;
  const TrainConfig tc = cfg.train();
  std::optional<TrainResult> trained;

  if (mode == "standard_only" || mode == "safecoder") {
    const fs::path sp = cfg.path("train", "std_dataset");
    inputs.push_back(sp);
    Dataset d{load_dataset(sp).std_samples, {}};
    if (mode == "safecoder") {
      const fs::path secp = cfg.path("train", "sec_dataset");
      inputs.push_back(secp);
      d.sec_samples = load_dataset(secp).sec_samples;
    }
    ModelState init = initial_model(cfg, inputs);
    trained = train_joint(init, d, tc);
  } else if (mode == "sven") {
    if (!cfg.has("train", "base_checkpoint")) throw UsageError("mode sven needs train.base_checkpoint");
    const fs::path bp = cfg.path("train", "base_checkpoint");
    const fs::path secp = cfg.path("train", "sec_dataset");
    inputs.push_back(bp);
    inputs.push_back(secp);
    const ModelState base = load_checkpoint(bp);
    ModelState init = base;
    if (auto ip = cfg.optional_path("train", "init_checkpoint")) {
      inputs.push_back(*ip);
      init = load_checkpoint(*ip);
    }
    trained = train_sven(init, base, load_dataset(secp).sec_samples, tc, cfg.sven());
  } else {
    throw UsageError("unknown train.mode '" + mode + "' (standard_only, safecoder, sven)");
  }
  const TrainResult& res = *trained;

  const std::string h = content_hash("train", cfg, inputs);
  const fs::path out = cfg.out_dir();
  fs::create_directories(out);
  Artifacts a;
  a.files["checkpoint"] = out / ("ckpt-" + h + ".bin");
  a.files["log"] = out / ("trainlog-" + h + ".jsonl");
  a.files["meta"] = out / ("train-" + h + ".json");
  save_checkpoint(res.model, a.files["checkpoint"]);
  write_text(a.files["log"], res.log.to_jsonl());
  a.summary = {{"kind", "train"},
               {"mode", mode},
               {"checkpoint", a.files["checkpoint"].filename().string()},
               {"log", a.files["log"].filename().string()},
               {"steps", res.log.steps.size()},
               {"final_loss", res.log.steps.empty() ? json(nullptr) : json(res.log.steps.back().loss)},
               {"metadata", metadata("train", h)}};
  if (mode == "sven") a.summary["identity_max_error"] = sven_identity_error(res.log);
  write_json(a.files["meta"], a.summary);
  log << "train (" << mode << "): " << res.log.steps.size() << " micro-steps, checkpoint "
      << a.files["checkpoint"].string() << "\n";
  return a;
}

Artifacts cmd_eval(const RunConfig& cfg, std::ostream& log) {
  std::vector<fs::path> inputs;
  const fs::path cp = cfg.path("eval", "checkpoint");
  inputs.push_back(cp);
  const ModelState m = load_checkpoint(cp);
  const EvalSetup e = eval_setup(cfg, inputs);
  const std::string h = content_hash("eval", cfg, inputs);
  json result = evaluate(m, e);

  Artifacts a;
  const fs::path out = cfg.out_dir();
  fs::create_directories(out);
  a.files["report"] = out / ("eval-" + h + ".json");
  a.summary = {{"kind", "eval"},
               {"checkpoint", cp.filename().string()},
               {"n", e.n},
               {"temperature", e.temperature},
               {"seed", e.seed},
               {"variants", result["variants"]},
               {"utility", result["utility"]},
               {"metadata", metadata("eval", h)}};
  write_json(a.files["report"], a.summary);
  for (const auto& v : result["variants"]) {
    log << std::left << std::setw(14) << v["variant"].get<std::string>() << " security " << percent(v["security"]);
    if (!v["undefined"].empty()) log << "  (undefined: " << v["undefined"].dump() << ")";
    log << "\n";
  }
  log << "utility probe " << percent(result["utility"]) << "\n";
  log << "report: " << a.files["report"].string() << "\n";
  return a;
}

Artifacts cmd_sweep_sven(const RunConfig& cfg, std::ostream& log) {
  std::vector<fs::path> inputs;
  if (!cfg.has("sweep", "base_checkpoint")) throw UsageError("sweep-sven needs sweep.base_checkpoint");
  const fs::path bp = cfg.path("sweep", "base_checkpoint");
  inputs.push_back(bp);
  const fs::path secp = cfg.has("sweep", "sec_dataset") ? cfg.path("sweep", "sec_dataset") : cfg.path("train", "sec_dataset");
  inputs.push_back(secp);
  const ModelState base = load_checkpoint(bp);
  const std::vector<SecurityTriple> sec = load_dataset(secp).sec_samples;
  EvalSetup e = eval_setup(cfg, inputs);
  e.variants = {PromptVariant::kFuncOnly};
  e.n = cfg.get<int>("sweep", "eval_n", e.n);
  const std::vector<int> ns = cfg.get<std::vector<int>>("sweep", "n", {1, 2, 3, 4, 5, 6, 7, 8});
  if (ns.empty()) throw UsageError("sweep.n is empty");
  TrainConfig tc = train_fields(cfg, "sweep", cfg.train());
  tc = checked(tc);
  const std::string h = content_hash("sweep-sven", cfg, inputs);
  const fs::path out = cfg.out_dir();
  fs::create_directories(out);

  Artifacts a;
  json rows = json::array();
  std::vector<double> sec_pts, util_pts, w_pts;
  for (int n : ns) {
    const double w = std::ldexp(1.0, n) / 10.0;
    TrainResult r = train_sven(base, base, sec, tc, SvenConfig{w});
    const std::string key = "n" + std::to_string(n);
    a.files[key] = out / ("sweep-" + h + "-" + key + ".bin");
    save_checkpoint(r.model, a.files[key]);
    json ev = evaluate(r.model, e);
    const json security = func_only_security(ev);
    std::size_t sven_steps = 0;
    for (const auto& s : r.log.steps) sven_steps += s.sven ? 1 : 0;
    rows.push_back({{"n", n},
                    {"kl_weight", w},
                    {"checkpoint", a.files[key].filename().string()},
                    {"security", security},
                    {"utility", ev["utility"]},
                    {"steps", r.log.steps.size()},
                    {"logged_terms", sven_steps},
                    {"identity_max_error", sven_identity_error(r.log)},
                    {"scenarios", ev["variants"][0]["scenarios"]}});
    if (!security.is_null() && !ev["utility"].is_null()) {
      sec_pts.push_back(security.get<double>());
      util_pts.push_back(ev["utility"].get<double>());
      w_pts.push_back(n);
    }
    log << "kl_weight " << std::setw(6) << w << "  security " << percent(security) << "  utility "
        << percent(ev["utility"]) << "\n";
  }
  a.files["report"] = out / ("sweep-" + h + ".json");
  a.summary = {{"kind", "sweep"},
               {"base_checkpoint", bp.filename().string()},
               {"rows", rows},
               {"slope_security_per_utility", opt_number(fit_slope(util_pts, sec_pts))},
               {"slope_security_per_n", opt_number(fit_slope(w_pts, sec_pts))},
               {"slope_utility_per_n", opt_number(fit_slope(w_pts, util_pts))},
               {"metadata", metadata("sweep-sven", h)}};
  write_json(a.files["report"], a.summary);
  log << "trade-off slope (security per utility point): " << a.summary["slope_security_per_utility"].dump() << "\n";
  log << "report: " << a.files["report"].string() << "\n";
  return a;
}

Artifacts cmd_study(const RunConfig& cfg, std::ostream& log) {
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(clock::now() - t0).count(); };

  std::vector<fs::path> inputs;
  const std::vector<SecurityTriple> triples = mine_triples(cfg, inputs, nullptr);
  const fs::path pp = cfg.path("pretrain", "dataset");
  const fs::path sp = cfg.path("train", "std_dataset");
  inputs.push_back(pp);
  inputs.push_back(sp);
  const Dataset pre_data{load_dataset(pp).std_samples, {}};
  const Dataset std_data{load_dataset(sp).std_samples, {}};
  const EvalSetup e = eval_setup(cfg, inputs);
  const std::string h = content_hash("study", cfg, inputs);
  const fs::path out = cfg.out_dir();
  fs::create_directories(out);

  Artifacts a;
  a.files["sec_dataset"] = out / ("study-" + h + "-sec.jsonl");
  save_dataset(Dataset{{}, triples}, a.files["sec_dataset"]);

  const ModelState init = ModelState::init(cfg.model(), Rng(cfg.seed()).fork("init").next());
  const ModelState pretrained = train_joint(init, pre_data, cfg.pretrain()).model;
  log << "pretrained on " << pre_data.size() << " samples (" << std::fixed << std::setprecision(1) << elapsed()
      << " s)\n";
  const TrainConfig tc = cfg.train();
  const ModelState standard = train_joint(pretrained, std_data, tc).model;
  log << "standard_only tuned (" << elapsed() << " s)\n";
  Dataset joint = std_data;
  joint.sec_samples = triples;
  const ModelState safecoder = train_joint(pretrained, joint, tc).model;
  log << "safecoder tuned with " << triples.size() << " security triples (" << elapsed() << " s)\n";

  json rows = json::array();
  for (auto [name, model] : {std::pair<const char*, const ModelState*>{"none", &pretrained},
                             {"standard_only", &standard},
                             {"safecoder", &safecoder}}) {
    a.files[name] = out / ("study-" + h + "-" + name + ".bin");
    save_checkpoint(*model, a.files[name]);
    json ev = evaluate(*model, e);
    rows.push_back({{"config", name},
                    {"checkpoint", a.files[name].filename().string()},
                    {"security", func_only_security(ev)},
                    {"utility", ev["utility"]},
                    {"variants", ev["variants"]}});
    log << std::left << std::setw(14) << name << " security " << std::setw(6) << percent(rows.back()["security"])
        << " utility " << percent(ev["utility"]) << "  (" << elapsed() << " s)\n";
  }
  const json& s_std = rows[1]["security"];
  const json& s_sc = rows[2]["security"];
  const json& u_std = rows[1]["utility"];
  const json& u_sc = rows[2]["utility"];
  json gap = (s_std.is_null() || s_sc.is_null()) ? json(nullptr) : json(s_sc.get<double>() - s_std.get<double>());
  json drop = (u_std.is_null() || u_sc.is_null()) ? json(nullptr) : json(u_std.get<double>() - u_sc.get<double>());

  a.files["report"] = out / ("study-" + h + ".json");
  a.summary = {{"kind", "study"},
               {"n", e.n},
               {"temperature", e.temperature},
               {"security_triples", triples.size()},
               {"sec_dataset", a.files["sec_dataset"].filename().string()},
               {"rows", rows},
               {"security_gain", gap},
               {"utility_drop", drop},
               {"metadata", metadata("study", h)}};
  a.summary["metadata"]["seconds"] = elapsed();
  write_json(a.files["report"], a.summary);
  log << "security gain " << percent(gap) << " points, utility drop " << percent(drop) << " points\n";
  log << "report: " << a.files["report"].string() << "\n";
  return a;
}

Artifacts cmd_report(const RunConfig& cfg, std::ostream& log) {
  const auto paths = cfg.get<std::vector<std::string>>("report", "inputs", {});
  if (paths.empty()) throw UsageError("report needs report.inputs");
  std::vector<fs::path> inputs;
  std::ostringstream md;
  md << std::fixed << std::setprecision(1);
  for (std::size_t i = 0; i < paths.size(); ++i) {
    RunConfig probe = cfg;
    probe.set("report.input_" + std::to_string(i), json(paths[i]).dump());
    const fs::path p = probe.path("report", "input_" + std::to_string(i));
    inputs.push_back(p);
    const json r = json::parse(read_bytes(p));
    const std::string kind = r.value("kind", "");
    md << "## " << p.filename().string() << "\n\n";
    if (kind == "study") {
      md << "| Model | Security | Utility |\n|---|---|---|\n";
      for (const auto& row : r.at("rows")) {
        md << "| " << row.at("config").get<std::string>() << " | " << percent(row.at("security")) << " | "
           << percent(row.at("utility")) << " |\n";
      }
      md << "\nsecurity gain " << percent(r.at("security_gain")) << ", utility drop " << percent(r.at("utility_drop"))
         << " (n = " << r.at("n") << ", temperature " << r.at("temperature").get<double>() << ")\n\n";
    } else if (kind == "eval") {
      md << "| Variant | Security | Undefined scenarios |\n|---|---|---|\n";
      for (const auto& v : r.at("variants")) {
        md << "| " << v.at("variant").get<std::string>() << " | " << percent(v.at("security")) << " | "
           << v.at("undefined").size() << " |\n";
      }
      md << "\nutility probe " << percent(r.at("utility")) << "\n\n";
      md << "| Scenario | func_only valid | func_only secure | rate |\n|---|---|---|---|\n";
      for (const auto& s : r.at("variants").at(0).at("scenarios")) {
        md << "| " << s.at("scenario").get<std::string>() << " | " << s.at("n_valid") << " | " << s.at("n_secure")
           << " | " << (s.at("rate").is_null() ? "n/a" : percent(100.0 * s.at("rate").get<double>())) << " |\n";
      }
      md << "\n";
    } else if (kind == "sweep") {
      md << "| n | kl weight | Security | Utility | Checkpoint |\n|---|---|---|---|---|\n";
      std::vector<double> xs, ys;
      for (const auto& row : r.at("rows")) {
        md << "| " << row.at("n") << " | " << row.at("kl_weight").get<double>() << " | " << percent(row.at("security"))
           << " | " << percent(row.at("utility")) << " | " << row.at("checkpoint").get<std::string>() << " |\n";
        if (!row.at("security").is_null() && !row.at("utility").is_null()) {
          xs.push_back(row.at("utility").get<double>());
          ys.push_back(row.at("security").get<double>());
        }
      }
      md << "\nslope of security against utility: " << r.at("slope_security_per_utility").dump() << "\n\n```\n"
         << ascii_curve(xs, ys, "utility", "security") << "```\n\n";
    } else if (kind == "mine") {
      const json& f = r.at("funnel");
      md << "| input | filtered | analyzed | verified | triples |\n|---|---|---|---|---|\n| " << f.at("input") << " | "
         << f.at("filtered") << " | " << f.at("analyzed") << " | " << f.at("verified") << " | " << f.at("triples")
         << " |\n\n";
    } else {
      throw UsageError(p.string() + " is not an eval, study, sweep or mine report");
    }
  }
  const std::string h = content_hash("report", cfg, inputs);
  const fs::path out = cfg.out_dir();
  fs::create_directories(out);
  Artifacts a;
  a.files["report"] = out / ("report-" + h + ".md");
  write_text(a.files["report"], md.str());
  log << md.str();
  log << "report: " << a.files["report"].string() << "\n";
  return a;
}

}  // namespace sectune::cli
