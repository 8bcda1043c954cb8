#include "preemptkit/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"

#include "preemptkit/attacks.hpp"
#include "preemptkit/defense.hpp"
#include "preemptkit/fingerprint.hpp"
#include "preemptkit/gradcheck.hpp"
#include "preemptkit/image_io.hpp"
#include "preemptkit/metrics.hpp"
#include "preemptkit/random.hpp"
#include "preemptkit/reversion.hpp"

namespace pk::pipeline {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kManifestFormat = "preemptkit-manifest/1";
constexpr const char* kExamplesFormat = "preemptkit-examples/1";
constexpr const char* kModelCardFormat = "preemptkit-model/1";

const std::map<std::string, std::uint64_t>& seed_salts() {
  static const std::map<std::string, std::uint64_t> salts{
      {"train_seed", 1}, {"defense_seed", 2}, {"attack_seed", 3}, {"protocol_seed", 4}};
  return salts;
}

std::vector<std::string> seeds_used(const std::string& sub) {
  if (sub == "train" || sub == "gradcheck") return {"train_seed"};
  if (sub == "defend") return {"defense_seed"};
  if (sub == "attack") return {"attack_seed"};
  if (sub == "eval") return {"attack_seed", "defense_seed"};
  if (sub == "revert") return {"protocol_seed", "defense_seed"};
  return {};
}

const std::vector<std::string>& path_pointers() {
  static const std::vector<std::string> pointers{"/data/images", "/data/labels", "/classifier", "/backbone",
                                                 "/victim",      "/model",       "/inputs",     "/robust",
                                                 "/black_box/classifier",        "/black_box/backbone"};
  return pointers;
}

json without_seed(json j) {
  j.erase("seed");
  return j;
}

json data_default(std::uint64_t seed, std::size_t count) {
  json spec = SynthSpec{}.to_json();
  spec.erase("per_class");
  return {{"kind", "synthetic"}, {"spec", spec}, {"seed", seed}, {"count", count}};
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// Collects written files and read inputs with their hashes.
class Recorder {
 public:
  explicit Recorder(fs::path out_dir) : out_dir_(std::move(out_dir)) { fs::create_directories(out_dir_); }

  void write(const std::string& name, const std::string& file, std::span<const std::uint8_t> bytes) {
    write_file_atomic(out_dir_ / file, bytes);
    artifacts_[name] = {{"path", file}, {"sha256", sha256_hex(bytes)}};
  }
  void write(const std::string& name, const std::string& file, const std::string& text) {
    write(name, file, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  }
  void input(const std::string& name, const fs::path& path) {
    inputs_[name] = {{"path", path.string()}, {"sha256", sha256_hex(read_file(path))}};
  }
  void timing(const std::string& name, double seconds) { timings_[name] = seconds; }

  const fs::path& out_dir() const { return out_dir_; }
  json artifacts() const { return artifacts_; }
  json inputs() const { return inputs_; }
  json timings() const { return timings_; }

 private:
  fs::path out_dir_;
  json artifacts_ = json::object();
  json inputs_ = json::object();
  json timings_ = json::object();
};

std::string dump(const json& j) { return j.dump(2) + "\n"; }

Model model_input(Recorder& rec, const std::string& name, const json& path) {
  if (!path.is_string()) throw ConfigError("config: '" + name + "' must name a weights file");
  const fs::path p = path.get<std::string>();
  rec.input(name, p);
  rec.input(name + "_card", fs::path(p.string() + ".json"));
  return load_model(p);
}

ExampleSet examples_input(Recorder& rec, const std::string& name, const json& path) {
  if (!path.is_string()) throw ConfigError("config: '" + name + "' must name an example set file");
  const fs::path p = path.get<std::string>();
  rec.input(name, p);
  return load_examples(p);
}

Dataset data_input(Recorder& rec, const json& spec) {
  if (spec.value("kind", std::string()) == "idx") {
    rec.input("data_images", spec.at("images").get<std::string>());
    rec.input("data_labels", spec.at("labels").get<std::string>());
  }
  return load_data(spec);
}

DefenseConfig defense_from(const json& cfg) {
  json d = cfg.at("defense");
  d["seed"] = cfg.at("defense_seed");
  DefenseConfig out = DefenseConfig::from_json(d);
  out.validate();
  return out;
}

AttackBudget attack_from(const json& cfg) {
  json a = cfg.at("attack");
  a["seed"] = cfg.at("attack_seed");
  AttackBudget out = AttackBudget::from_json(a);
  return out;
}

// Images of `set` in the dataset's order; ids must match one to one.
std::vector<Tensor> align(const ExampleSet& set, const Dataset& data, const std::string& what) {
  if (set.ids != data.ids) {
    throw ConfigError(what + ": example set ids do not match the dataset (" + std::to_string(set.ids.size()) +
                      " vs " + std::to_string(data.size()) + " samples)");
  }
  for (const auto& img : set.images) {
    if (img.shape() != data.image_shape()) throw ShapeError(what + ": example set image shape differs from the dataset");
  }
  return set.images;
}

void check_data_fingerprint(const ExampleSet& set, const Dataset& data, const std::string& what) {
  const std::string expected = set.meta.value("data_fingerprint", std::string());
  if (!expected.empty() && expected != dataset_fingerprint(data)) {
    throw ConfigError(what + ": example set was produced from different data");
  }
}

// ---------------------------------------------------------------------------
// Subcommands

void run_train(const json& cfg, Recorder& rec) {
  const Dataset data = data_input(rec, cfg.at("data"));
  const json& net = cfg.at("network");
  const std::string kind = net.value("kind", std::string("reference"));
  NetworkDef def;
  if (kind == "reference") {
    def = NetworkDef::reference(data.image_shape(), data.classes, net.value("filters", std::size_t{8}));
  } else if (kind == "linear") {
    def = NetworkDef::linear(data.image_shape(), data.classes);
  } else {
    throw ConfigError("train: unknown network kind '" + kind + "'");
  }
  json tj = cfg.at("train");
  tj["seed"] = cfg.at("train_seed");
  const TrainConfig tc = TrainConfig::from_json(tj);

  const auto started = std::chrono::steady_clock::now();
  const Model model = tc.adversarial ? train_adversarial(def, data, tc) : train_standard(def, data, tc);
  rec.timing("train_seconds", seconds_since(started));

  const auto bytes = encode_weights(def, model.params());
  rec.write("weights", "model.pkw", bytes);
  const json card{{"format", kModelCardFormat},
                  {"network", def.to_json()},
                  {"train", tc.to_json()},
                  {"mode", to_string(tc.mode())},
                  {"train_accuracy", model.params().train_accuracy},
                  {"data_fingerprint", dataset_fingerprint(data)},
                  {"config_fingerprint", json_fingerprint(tc.to_json())},
                  {"weights_sha256", sha256_hex(bytes)}};
  rec.write("model_card", "model.pkw.json", dump(card));
  std::cout << "trained " << to_string(tc.mode()) << " model: train accuracy " << model.params().train_accuracy
            << "\n";
}

void run_defend(const json& cfg, Recorder& rec) {
  const DefenseConfig dc = defense_from(cfg);
  const Dataset data = data_input(rec, cfg.at("data"));
  const Model classifier = model_input(rec, "classifier", cfg.at("classifier"));
  const Model backbone = model_input(rec, "backbone", cfg.at("backbone"));

  const auto started = std::chrono::steady_clock::now();
  const auto results = batch_defend(classifier, backbone, data.images, data.ids, dc);
  const double elapsed = seconds_since(started);
  rec.timing("defense_seconds", elapsed);
  rec.timing("defense_seconds_per_sample", elapsed / static_cast<double>(data.size()));

  ExampleSet set;
  set.kind = "robust";
  set.config_fingerprint = dc.fingerprint();
  set.meta = {{"defense", dc.to_json()},
              {"classifier_fingerprint", weights_fingerprint(classifier)},
              {"backbone_fingerprint", weights_fingerprint(backbone)},
              {"data_fingerprint", dataset_fingerprint(data)}};
  set.ids = data.ids;
  std::size_t agree = 0;
  double worst = 0.0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    set.labels.push_back(results[i].label_used);
    set.images.push_back(results[i].robust);
    agree += results[i].label_used == data.labels[i] ? 1 : 0;
    worst = std::max(worst, linf_distance(results[i].robust, data.images[i]));
  }
  rec.write("robust_examples", "robust.json", set.to_json().dump() + "\n");
  std::cout << "defended " << data.size() << " inputs; classifier label accuracy "
            << static_cast<double>(agree) / static_cast<double>(data.size()) << ", max Linf " << worst << "\n";
}

void run_attack(const json& cfg, Recorder& rec) {
  const AttackBudget budget = attack_from(cfg);
  budget.validate();
  const Dataset data = data_input(rec, cfg.at("data"));
  const Model model = model_input(rec, "model", cfg.at("model"));
  std::vector<Tensor> inputs = data.images;
  std::string source = "data";
  if (!cfg.at("inputs").is_null()) {
    const ExampleSet in = examples_input(rec, "inputs", cfg.at("inputs"));
    check_data_fingerprint(in, data, "attack");
    inputs = align(in, data, "attack");
    source = in.kind;
  }
  const auto started = std::chrono::steady_clock::now();
  const auto adversarial = attack_batch(model, inputs, data.labels, data.ids, budget);
  rec.timing("attack_seconds", seconds_since(started));

  ExampleSet set;
  set.kind = "adversarial";
  set.config_fingerprint = json_fingerprint(budget.to_json());
  set.meta = {{"attack", budget.to_json()},
              {"source", source},
              {"model_fingerprint", weights_fingerprint(model)},
              {"data_fingerprint", dataset_fingerprint(data)}};
  set.ids = data.ids;
  set.labels = data.labels;
  set.images = adversarial;
  rec.write("adversarial_examples", "adversarial.json", set.to_json().dump() + "\n");
  const json summary{{"samples", data.size()},
                     {"source", source},
                     {"attack", budget.to_json()},
                     {"model_fingerprint", weights_fingerprint(model)},
                     {"accuracy_before", accuracy(model, inputs, data.labels)},
                     {"accuracy_after", accuracy(model, adversarial, data.labels)}};
  rec.write("summary", "attack.json", dump(summary));
  std::cout << "attacked " << data.size() << " inputs: accuracy " << summary["accuracy_before"].get<double>()
            << " -> " << summary["accuracy_after"].get<double>() << "\n";
}

void run_eval(const json& cfg, Recorder& rec) {
  const DefenseConfig dc = defense_from(cfg);
  const AttackBudget budget = attack_from(cfg);
  const Dataset data = data_input(rec, cfg.at("data"));
  const Model victim = model_input(rec, "victim", cfg.at("victim"));
  const ExampleSet set = examples_input(rec, "robust", cfg.at("robust"));
  if (set.kind != "robust") throw ConfigError("eval: '" + cfg.at("robust").get<std::string>() + "' is not a robust set");
  if (set.config_fingerprint != dc.fingerprint()) {
    throw ConfigError("eval: robust set fingerprint " + set.config_fingerprint +
                      " does not match the declared defense config " + dc.fingerprint());
  }
  check_data_fingerprint(set, data, "eval");
  const auto robust = align(set, data, "eval");

  EvalOptions options;
  options.transferable = cfg.value("transferable", true);
  options.defense_fingerprint = dc.fingerprint();
  if (!cfg.at("backbone").is_null()) {
    const Model backbone = model_input(rec, "backbone", cfg.at("backbone"));
    options.backbone_fingerprint = weights_fingerprint(backbone);
    if (set.meta.value("backbone_fingerprint", options.backbone_fingerprint) != options.backbone_fingerprint) {
      throw ConfigError("eval: robust set was produced with a different backbone");
    }
  } else {
    options.backbone_fingerprint = set.meta.value("backbone_fingerprint", std::string());
  }
  const EvalReport report = clean_robust_eval(victim, data.images, data.labels, data.ids, robust, budget, options);
  rec.timing("eval_seconds", report.eval_seconds);
  rec.write("report", "report.json", dump(report.to_json()));
  rec.write("table", "report.txt", report.to_table());
  std::cout << report.to_table();
}

void run_revert(const json& cfg, Recorder& rec) {
  const DefenseConfig dc = defense_from(cfg);
  const Dataset data = data_input(rec, cfg.at("data"));
  const Model victim = model_input(rec, "victim", cfg.at("victim"));
  const Model classifier = model_input(rec, "classifier", cfg.at("classifier"));
  const Model backbone = model_input(rec, "backbone", cfg.at("backbone"));
  const json& bb = cfg.at("black_box");
  const Model other_backbone = model_input(rec, "black_box_backbone", bb.at("backbone"));
  std::optional<Model> other_classifier;
  if (!bb.at("classifier").is_null()) other_classifier = model_input(rec, "black_box_classifier", bb.at("classifier"));
  DefenseConfig other = dc;
  other.seed = bb.at("defense_seed").get<std::uint64_t>();

  const Defender defender{&classifier, &backbone, dc};
  const std::vector<ReversionScenario> scenarios{
      {"white_box_pr", ReversionMode::white_box, &classifier, &backbone, dc},
      {"black_box_pr", ReversionMode::black_box, other_classifier ? &*other_classifier : &classifier, &other_backbone,
       other}};
  ProtocolOptions options;
  options.fraction = cfg.at("protocol").value("fraction", options.fraction);
  options.noise_sigma = cfg.at("protocol").value("noise_sigma", options.noise_sigma);
  options.seed = cfg.at("protocol_seed").get<std::uint64_t>();

  const auto started = std::chrono::steady_clock::now();
  const ProtocolReport report = run_reversion_protocol(victim, data, defender, scenarios, options);
  rec.timing("protocol_seconds", seconds_since(started));
  rec.write("report", "protocol.json", dump(report.to_json()));
  rec.write("table", "protocol.txt", report.to_table());
  std::cout << report.to_table();
}

void run_viz(const json& cfg, Recorder& rec) {
  const Dataset data = data_input(rec, cfg.at("data"));
  const ExampleSet set = examples_input(rec, "robust", cfg.at("robust"));
  check_data_fingerprint(set, data, "viz");
  const auto robust = align(set, data, "viz");
  const double eps = set.meta.contains("defense") ? set.meta.at("defense").value("eps", 8.0 / 255.0)
                                                 : set.meta.at("attack").value("eps", 8.0 / 255.0);
  const std::size_t count = std::min(cfg.value("count", std::size_t{8}), data.size());
  const bool colour = data.image_shape().channels == 3;
  const std::string ext = colour ? ".ppm" : ".pgm";
  auto encode = [&](const Tensor& t) { return colour ? encode_ppm(t) : encode_pgm(t); };
  for (std::size_t i = 0; i < count; ++i) {
    const std::string id = std::to_string(data.ids[i]);
    rec.write("original_" + id, "original_" + id + ext, encode(data.images[i]));
    rec.write("robust_" + id, "robust_" + id + ext, encode(robust[i]));
    rec.write("perturbation_" + id, "perturbation_" + id + ".pgm",
              encode_pgm(perturbation_grayscale(sub(robust[i], data.images[i]), eps)));
  }
  std::cout << "wrote " << count << " image triples to " << rec.out_dir().string() << "\n";
}

bool run_gradcheck_cmd(const json& cfg, Recorder& rec) {
  const json& g = cfg.at("gradcheck");
  GradcheckOptions options;
  options.nets = g.value("nets", options.nets);
  options.h = g.value("h", options.h);
  options.tolerance = g.value("tolerance", options.tolerance);
  options.min_kink_margin = g.value("min_kink_margin", options.min_kink_margin);
  options.floor = g.value("floor", options.floor);
  options.seed = cfg.at("train_seed").get<std::uint64_t>();
  const auto started = std::chrono::steady_clock::now();
  const GradcheckReport report = run_gradcheck(options);
  rec.timing("gradcheck_seconds", seconds_since(started));
  rec.write("report", "gradcheck.json", dump(report.to_json()));
  std::cout << "gradcheck over " << report.nets << " nets: max input rel error " << report.max_input_rel_error
            << ", max param rel error " << report.max_param_rel_error << (report.passed() ? " (pass)" : " (FAIL)")
            << "\n";
  return report.passed();
}

}  // namespace

const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names{"train", "defend", "attack", "eval", "revert", "viz", "gradcheck"};
  return names;
}

std::string primary_seed(const std::string& subcommand) {
  const auto used = seeds_used(subcommand);
  return used.empty() ? std::string() : used.front();
}

json default_config(const std::string& sub) {
  const json defense = without_seed(DefenseConfig{}.to_json());
  const json attack = without_seed(AttackBudget::evaluation(8.0 / 255.0).to_json());
  if (sub == "train") {
    TrainConfig tc;
    tc.epochs = 15;
    return {{"seed", 0},
            {"data", data_default(1, 2000)},
            {"network", {{"kind", "reference"}, {"filters", 8}}},
            {"train", without_seed(tc.to_json())}};
  }
  if (sub == "defend") {
    return {{"seed", 0},
            {"data", data_default(2, 1000)},
            {"classifier", "classifier/model.pkw"},
            {"backbone", "backbone/model.pkw"},
            {"defense", defense}};
  }
  if (sub == "attack") {
    return {{"seed", 0},
            {"data", data_default(2, 1000)},
            {"model", "victim/model.pkw"},
            {"inputs", nullptr},
            {"attack", attack}};
  }
  if (sub == "eval") {
    return {{"seed", 0},
            {"data", data_default(2, 1000)},
            {"victim", "victim/model.pkw"},
            {"backbone", "backbone/model.pkw"},
            {"robust", "defend/robust.json"},
            {"transferable", true},
            {"defense", defense},
            {"attack", attack}};
  }
  if (sub == "revert") {
    return {{"seed", 0},
            {"data", data_default(2, 1000)},
            {"victim", "victim/model.pkw"},
            {"classifier", "classifier/model.pkw"},
            {"backbone", "backbone/model.pkw"},
            {"black_box", {{"classifier", nullptr}, {"backbone", "backbone_b/model.pkw"}, {"defense_seed", nullptr}}},
            {"defense", defense},
            {"protocol", {{"fraction", 0.1}, {"noise_sigma", 0.05}}}};
  }
  if (sub == "viz") {
    return {{"seed", 0}, {"data", data_default(2, 1000)}, {"robust", "defend/robust.json"}, {"count", 8}};
  }
  if (sub == "gradcheck") {
    const GradcheckOptions g;
    return {{"seed", 0},
            {"gradcheck",
             {{"nets", g.nets},
              {"h", g.h},
              {"tolerance", g.tolerance},
              {"min_kink_margin", g.min_kink_margin},
              {"floor", g.floor}}}};
  }
  throw ConfigError("unknown subcommand '" + sub + "'");
}

json resolve_config(const std::string& sub, const json& file, std::optional<std::uint64_t> seed_flag,
                    const fs::path& base_dir) {
  json cfg = default_config(sub);
  if (file.is_object() && file.value("format", std::string()) == kManifestFormat) {
    if (file.at("subcommand") != sub) {
      throw ConfigError("manifest was written by '" + file.at("subcommand").get<std::string>() + "', not '" + sub + "'");
    }
    cfg = file.at("config");
  } else if (!file.is_null()) {
    if (!file.is_object()) throw ConfigError("config must be a JSON object");
    cfg.merge_patch(file);
  }

  const std::uint64_t top = cfg.value("seed", std::uint64_t{0});
  for (const auto& name : seeds_used(sub)) {
    if (!cfg.contains(name) || cfg.at(name).is_null()) cfg[name] = derive_seed(top, seed_salts().at(name));
  }
  if (seed_flag) {
    const std::string name = primary_seed(sub);
    if (name.empty()) throw ConfigError("--seed has no effect for '" + sub + "'");
    cfg[name] = *seed_flag;
  }
  if (sub == "revert" && cfg.at("black_box").at("defense_seed").is_null()) {
    cfg["black_box"]["defense_seed"] = derive_seed(cfg.at("defense_seed").get<std::uint64_t>(), 1);
  }

  for (const auto& pointer : path_pointers()) {
    const json::json_pointer ptr(pointer);
    if (!cfg.contains(ptr) || !cfg.at(ptr).is_string()) continue;
    const fs::path p = cfg.at(ptr).get<std::string>();
    if (p.is_relative()) cfg[ptr] = (fs::absolute(base_dir) / p).lexically_normal().string();
  }
  return cfg;
}

json run(const std::string& sub, const json& resolved, const fs::path& out_dir) {
  const auto& names = subcommands();
  if (std::find(names.begin(), names.end(), sub) == names.end()) throw ConfigError("unknown subcommand '" + sub + "'");
  Recorder rec(out_dir);
  const auto started = std::chrono::steady_clock::now();
  bool ok = true;
  if (sub == "train") {
    run_train(resolved, rec);
  } else if (sub == "defend") {
    run_defend(resolved, rec);
  } else if (sub == "attack") {
    run_attack(resolved, rec);
  } else if (sub == "eval") {
    run_eval(resolved, rec);
  } else if (sub == "revert") {
    run_revert(resolved, rec);
  } else if (sub == "viz") {
    run_viz(resolved, rec);
  } else {
    ok = run_gradcheck_cmd(resolved, rec);
  }
  rec.timing("total_seconds", seconds_since(started));

  json seeds = json::object();
  for (const auto& name : seeds_used(sub)) seeds[name] = resolved.at(name);
  if (sub == "revert") seeds["black_box_defense_seed"] = resolved.at("black_box").at("defense_seed");
  json manifest{{"format", kManifestFormat},
                {"tool", "preemptkit"},
                {"subcommand", sub},
                {"config", resolved},
                {"config_fingerprint", json_fingerprint(resolved)},
                {"seeds", seeds},
                {"inputs", rec.inputs()},
                {"artifacts", rec.artifacts()},
                {"timings", rec.timings()},
                {"passed", ok}};
  write_file_atomic(out_dir / "manifest.json", dump(manifest));
  return manifest;
}

json run_file(const std::string& sub, const fs::path& config_path, std::optional<std::uint64_t> seed_flag,
              const fs::path& out_dir) {
  json file;
  fs::path base = fs::current_path();
  if (!config_path.empty()) {
    const auto bytes = read_file(config_path);
    try {
      file = json::parse(bytes.begin(), bytes.end());
    } catch (const json::parse_error& e) {
      throw ConfigError("config " + config_path.string() + ": " + e.what());
    }
    base = fs::absolute(config_path).parent_path();
  }
  if (file.is_object() && file.value("format", std::string()) == kManifestFormat) {
    if (seed_flag) throw ConfigError("--seed cannot be combined with a manifest replay");
    for (const auto& [name, entry] : file.at("inputs").items()) {
      const fs::path p = entry.at("path").get<std::string>();
      if (sha256_hex(read_file(p)) != entry.at("sha256").get<std::string>()) {
        throw ConfigError("replay: input '" + name + "' (" + p.string() + ") changed since the recorded run");
      }
    }
  }
  return run(sub, resolve_config(sub, file, seed_flag, base), out_dir);
}

Dataset load_data(const json& spec) {
  const std::string kind = spec.value("kind", std::string("synthetic"));
  if (kind == "synthetic") {
    SynthSpec s = SynthSpec::from_json(spec.value("spec", json::object()));
    const std::size_t count = spec.value("count", std::size_t{0});
    if (count > 0) s.per_class = (count + s.classes - 1) / s.classes;
    Dataset d = synth_dataset(s, spec.value("seed", std::uint64_t{0}));
    return count > 0 ? d.subset(0, count) : d;
  }
  if (kind == "idx") {
    const std::size_t offset = spec.value("offset", std::size_t{0});
    const std::size_t count = spec.value("count", std::size_t{0});
    Dataset d = load_idx(spec.at("images").get<std::string>(), spec.at("labels").get<std::string>(),
                         spec.value("classes", std::size_t{10}), count == 0 ? 0 : offset + count);
    if (offset > d.size()) throw ConfigError("data: offset beyond the end of the IDX file");
    return offset > 0 ? d.subset(offset, d.size() - offset) : d;
  }
  throw ConfigError("data: unknown kind '" + kind + "'");
}

Model load_model(const fs::path& weights_path) {
  const fs::path card_path = weights_path.string() + ".json";
  const auto card_bytes = read_file(card_path);
  json card;
  try {
    card = json::parse(card_bytes.begin(), card_bytes.end());
  } catch (const json::parse_error& e) {
    throw FormatError("model card " + card_path.string() + ": " + e.what());
  }
  if (card.value("format", std::string()) != kModelCardFormat) {
    throw FormatError("model card " + card_path.string() + ": unknown format");
  }
  const auto bytes = read_file(weights_path);
  if (sha256_hex(bytes) != card.at("weights_sha256").get<std::string>()) {
    throw FormatError("weights " + weights_path.string() + " do not match the hash in their model card");
  }
  const NetworkDef def = NetworkDef::from_json(card.at("network"));
  ModelParams<float> params = decode_weights(def, bytes);
  params.mode = card.value("mode", std::string("standard")) == "adversarial" ? TrainingMode::adversarial
                                                                            : TrainingMode::standard;
  params.train_accuracy = card.value("train_accuracy", -1.0);
  if (card.contains("train")) {
    params.seed = card.at("train").value("seed", std::uint64_t{0});
    params.epochs = card.at("train").value("epochs", std::uint32_t{0});
  }
  return Model(def, std::move(params));
}

json ExampleSet::to_json() const {
  const Shape s = images.empty() ? Shape{} : images.front().shape();
  json imgs = json::array();
  for (const auto& img : images) imgs.push_back(img.values());
  return {{"format", kExamplesFormat},
          {"kind", kind},
          {"config_fingerprint", config_fingerprint},
          {"meta", meta},
          {"shape", {s.channels, s.height, s.width}},
          {"ids", ids},
          {"labels", labels},
          {"images", imgs}};
}

ExampleSet ExampleSet::from_json(const json& j) {
  if (j.value("format", std::string()) != kExamplesFormat) throw FormatError("example set: unknown format");
  ExampleSet set;
  set.kind = j.at("kind").get<std::string>();
  set.config_fingerprint = j.at("config_fingerprint").get<std::string>();
  set.meta = j.at("meta");
  set.ids = j.at("ids").get<std::vector<std::uint64_t>>();
  set.labels = j.at("labels").get<std::vector<std::size_t>>();
  const auto& sh = j.at("shape");
  const Shape shape{sh.at(0).get<std::size_t>(), sh.at(1).get<std::size_t>(), sh.at(2).get<std::size_t>()};
  for (const auto& img : j.at("images")) set.images.emplace_back(shape, img.get<std::vector<float>>());
  if (set.ids.size() != set.images.size() || set.labels.size() != set.images.size()) {
    throw FormatError("example set: ids, labels and images differ in length");
  }
  return set;
}

ExampleSet load_examples(const fs::path& path) {
  const auto bytes = read_file(path);
  try {
    return ExampleSet::from_json(json::parse(bytes.begin(), bytes.end()));
  } catch (const json::exception& e) {
    throw FormatError("example set " + path.string() + ": " + e.what());
  }
}

int main(int argc, char** argv) {
  CLI::App app{"preemptkit: preemptive adversarial defense, attacks, reversion and evaluation"};
  app.require_subcommand(1);
  std::string config;
  std::uint64_t seed_value = 0;
  std::string out;
  std::map<std::string, CLI::App*> commands;
  std::map<std::string, CLI::Option*> seed_options;
  const std::map<std::string, std::string> help{
      {"train", "train a classifier, backbone or victim (standard or adversarial)"},
      {"defend", "compute robust examples for a dataset"},
      {"attack", "multi-restart PGD against a model"},
      {"eval", "clean and robust accuracy of originals and robust examples"},
      {"revert", "label-corruption reversion protocol"},
      {"viz", "write originals, robust examples and perturbation maps as PGM/PPM"},
      {"gradcheck", "finite-difference check of input and parameter gradients"}};
  for (const auto& name : subcommands()) {
    CLI::App* cmd = app.add_subcommand(name, help.at(name));
    cmd->add_option("--config", config, "JSON config or a RunManifest to replay");
    seed_options[name] = cmd->add_option("--seed", seed_value, "overrides the subcommand's named seed");
    cmd->add_option("--out", out, "output directory (default: runs/<subcommand>)");
    commands[name] = cmd;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  std::string sub;
  for (const auto& [name, cmd] : commands) {
    if (cmd->parsed()) sub = name;
  }
  std::optional<std::uint64_t> seed;
  if (seed_options.at(sub)->count() > 0) seed = seed_value;
  const fs::path out_dir = out.empty() ? fs::path("runs") / sub : fs::path(out);
  try {
    const json manifest = run_file(sub, config, seed, out_dir);
    std::cout << "manifest: " << (out_dir / "manifest.json").string() << "\n";
    return manifest.at("passed").get<bool>() ? 0 : 1;
  } catch (const std::exception& e) {
    std::cerr << "preemptkit " << sub << ": " << e.what() << "\n";
    return 2;
  }
}

}  // namespace pk::pipeline
