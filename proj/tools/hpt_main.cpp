#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hpt/analysis.hpp"
#include "hpt/grad_check.hpp"
#include "hpt/train.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hpt;

namespace {

// ---------------------------------------------------------------------------
// configuration file + flag overrides

struct AppConfig {
  ModelConfig model;
  PetlConfig method;
  TrainConfig train;
  SyntheticSpec data;
  std::string data_dir;  // non-empty → read PTDS files instead of generating
  std::string out_dir;   // resolved before any command runs
  bool lr_explicit = false;
};

[[noreturn]] void bad_key(const std::string& table, const std::string& key) {
  throw ConfigError("unknown config key '" + (table.empty() ? key : table + "." + key) + "'");
}

std::size_t as_size(const json& v, const std::string& where) {
  if (v.is_number_unsigned()) return v.get<std::size_t>();
  if (v.is_number_integer() && v.get<long long>() >= 0) {
    return static_cast<std::size_t>(v.get<long long>());
  }
  throw ConfigError("'" + where + "' must be a non-negative integer");
}

double as_double(const json& v, const std::string& where) {
  if (v.is_number()) return v.get<double>();
  throw ConfigError("'" + where + "' must be a number");
}

bool as_bool(const json& v, const std::string& where) {
  if (v.is_boolean()) return v.get<bool>();
  throw ConfigError("'" + where + "' must be a boolean");
}

std::string as_string(const json& v, const std::string& where) {
  if (v.is_string()) return v.get<std::string>();
  throw ConfigError("'" + where + "' must be a string");
}

void apply_model(const json& t, ModelConfig& m) {
  for (const auto& [k, v] : t.items()) {
    if (k == "dim") m.dim = as_size(v, "model.dim");
    else if (k == "heads") m.heads = as_size(v, "model.heads");
    else if (k == "blocks") m.blocks = as_size(v, "model.blocks");
    else if (k == "feat") m.feat = as_size(v, "model.feat");
    else if (k == "max_seq") m.max_seq = as_size(v, "model.max_seq");
    else if (k == "classes") m.classes = as_size(v, "model.classes");
    else bad_key("model", k);
  }
}

void apply_method(const json& t, PetlConfig& m) {
  for (const auto& [k, v] : t.items()) {
    if (k == "kind") {
      m.method = method_from_string(as_string(v, "method.kind"));
    } else if (k == "rate") {
      m.rate = as_size(v, "method.rate");
    } else if (k == "bins") {
      m.bins = as_size(v, "method.bins");
    } else if (k == "rank") {
      m.rank = as_size(v, "method.rank");
    } else if (k == "placement") {
      m.placement = placement_from_string(as_string(v, "method.placement"));
    } else if (k == "shared") {
      m.shared = as_bool(v, "method.shared");
    } else if (k == "insertions") {
      if (!v.is_array()) throw ConfigError("'method.insertions' must be an array of strings");
      std::set<std::string> points;
      const auto& valid = ssf_insertion_points();
      for (const auto& e : v) {
        const std::string p = as_string(e, "method.insertions[]");
        if (std::find(valid.begin(), valid.end(), p) == valid.end()) {
          throw ConfigError("unknown insertion point '" + p + "'");
        }
        points.insert(p);
      }
      m.insertions = std::move(points);
    } else {
      bad_key("method", k);
    }
  }
}

void apply_train(const json& t, TrainConfig& c, bool& lr_explicit) {
  for (const auto& [k, v] : t.items()) {
    if (k == "lr") {
      c.lr = as_double(v, "train.lr");
      lr_explicit = true;
    } else if (k == "batch_size") {
      c.batch_size = as_size(v, "train.batch_size");
    } else if (k == "max_epochs") {
      c.max_epochs = as_size(v, "train.max_epochs");
    } else if (k == "patience") {
      c.patience = as_size(v, "train.patience");
    } else if (k == "seed") {
      c.seed = as_size(v, "train.seed");
    } else if (k == "weight_decay") {
      c.weight_decay = as_double(v, "train.weight_decay");
    } else {
      bad_key("train", k);
    }
  }
}

void apply_data(const json& t, AppConfig& cfg) {
  if (t.contains("dir") && t.size() > 1) {
    throw ConfigError("'data.dir' cannot be combined with generator keys");
  }
  for (const auto& [k, v] : t.items()) {
    if (k == "dir") cfg.data_dir = as_string(v, "data.dir");
    else if (k == "classes") cfg.data.classes = as_size(v, "data.classes");
    else if (k == "train_per_class") cfg.data.train_per_class = as_size(v, "data.train_per_class");
    else if (k == "val_per_class") cfg.data.val_per_class = as_size(v, "data.val_per_class");
    else if (k == "test_per_class") cfg.data.test_per_class = as_size(v, "data.test_per_class");
    else if (k == "seq") cfg.data.seq = as_size(v, "data.seq");
    else if (k == "feat") cfg.data.feat = as_size(v, "data.feat");
    else if (k == "delta0") cfg.data.delta0 = as_double(v, "data.delta0");
    else if (k == "delta_step") cfg.data.delta_step = as_double(v, "data.delta_step");
    else if (k == "sigma") cfg.data.sigma = as_double(v, "data.sigma");
    else if (k == "shift_profile") cfg.data.shift_profile = as_string(v, "data.shift_profile");
    else if (k == "seed") cfg.data.seed = as_size(v, "data.seed");
    else bad_key("data", k);
  }
}

void apply_config_json(const json& j, AppConfig& cfg) {
  if (!j.is_object()) throw ConfigError("config root must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (k == "model") apply_model(v, cfg.model);
    else if (k == "method") apply_method(v, cfg.method);
    else if (k == "train") apply_train(v, cfg.train, cfg.lr_explicit);
    else if (k == "data") apply_data(v, cfg);
    else if (k == "out_dir") cfg.out_dir = as_string(v, "out_dir");
    else bad_key("", k);
  }
}

json parse_json_text(const std::string& text, const std::string& origin) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(origin + ": " + e.what());
  }
}

void apply_config_file(const std::string& path, AppConfig& cfg) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config file '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  apply_config_json(parse_json_text(text, path), cfg);
}

json resolved_config_json(const AppConfig& cfg) {
  json j;
  j["model"] = {{"dim", cfg.model.dim},         {"heads", cfg.model.heads},
                {"blocks", cfg.model.blocks},   {"feat", cfg.model.feat},
                {"max_seq", cfg.model.max_seq}, {"classes", cfg.model.classes}};
  j["method"] = {{"kind", to_string(cfg.method.method)},
                 {"rate", cfg.method.rate},
                 {"bins", cfg.method.bins},
                 {"rank", cfg.method.rank},
                 {"placement", to_string(cfg.method.placement)},
                 {"insertions", cfg.method.insertions},
                 {"shared", cfg.method.shared}};
  j["train"] = {{"lr", cfg.train.lr},
                {"batch_size", cfg.train.batch_size},
                {"max_epochs", cfg.train.max_epochs},
                {"patience", cfg.train.patience},
                {"seed", cfg.train.seed},
                {"weight_decay", cfg.train.weight_decay}};
  if (!cfg.data_dir.empty()) {
    j["data"] = {{"dir", cfg.data_dir}};
  } else {
    j["data"] = {{"classes", cfg.data.classes},
                 {"train_per_class", cfg.data.train_per_class},
                 {"val_per_class", cfg.data.val_per_class},
                 {"test_per_class", cfg.data.test_per_class},
                 {"seq", cfg.data.seq},
                 {"feat", cfg.data.feat},
                 {"delta0", cfg.data.delta0},
                 {"delta_step", cfg.data.delta_step},
                 {"sigma", cfg.data.sigma},
                 {"shift_profile", cfg.data.shift_profile},
                 {"seed", cfg.data.seed}};
  }
  j["out_dir"] = cfg.out_dir;
  return j;
}

// ---------------------------------------------------------------------------
// flag plumbing: dotted overrides accumulate into a JSON patch that is applied
// on top of the config file, so flags always win.

struct FlagDef {
  const char* flag;
  const char* table;
  const char* key;
  char type;  // u=unsigned, d=double, b=bool, s=string, l=string list
  const char* help;
};

constexpr FlagDef kFlagDefs[] = {
    {"--model.dim", "model", "dim", 'u', "model width D"},
    {"--model.heads", "model", "heads", 'u', "attention heads"},
    {"--model.blocks", "model", "blocks", 'u', "encoder blocks"},
    {"--model.feat", "model", "feat", 'u', "input features per frame"},
    {"--model.max_seq", "model", "max_seq", 'u', "positional table length"},
    {"--model.classes", "model", "classes", 'u', "output classes"},
    {"--method.kind", "method", "kind", 's', "tuning method"},
    {"--method.rate", "method", "rate", 'u', "adapter reduction rate"},
    {"--method.bins", "method", "bins", 'u', "histogram bins"},
    {"--method.rank", "method", "rank", 'u', "low-rank update rank"},
    {"--method.placement", "method", "placement", 's', "histogram placement"},
    {"--method.insertions", "method", "insertions", 'l', "ssf insertion points, comma-separated"},
    {"--method.shared", "method", "shared", 'b', "share tuning modules across blocks"},
    {"--train.lr", "train", "lr", 'd', "learning rate"},
    {"--train.batch_size", "train", "batch_size", 'u', "batch size"},
    {"--train.max_epochs", "train", "max_epochs", 'u', "epoch cap"},
    {"--train.patience", "train", "patience", 'u', "early-stopping patience"},
    {"--train.seed", "train", "seed", 'u', "training/init seed"},
    {"--train.weight_decay", "train", "weight_decay", 'd', "decoupled weight decay"},
    {"--data.dir", "data", "dir", 's', "directory holding train/val/test .ptds files"},
    {"--data.classes", "data", "classes", 'u', "generator classes"},
    {"--data.train_per_class", "data", "train_per_class", 'u', "train samples per class"},
    {"--data.val_per_class", "data", "val_per_class", 'u', "val samples per class"},
    {"--data.test_per_class", "data", "test_per_class", 'u', "test samples per class"},
    {"--data.seq", "data", "seq", 'u', "frames per sample"},
    {"--data.feat", "data", "feat", 'u', "features per frame"},
    {"--data.delta0", "data", "delta0", 'd', "class-0 mixture offset"},
    {"--data.delta_step", "data", "delta_step", 'd', "per-class offset increment"},
    {"--data.sigma", "data", "sigma", 'd', "mixture noise sigma"},
    {"--data.shift_profile", "data", "shift_profile", 's', "eval-split shift: none or gain"},
    {"--data.seed", "data", "seed", 'u', "generator seed"},
};

json flag_value(const std::string& raw, const FlagDef& def) {
  const std::string where = def.flag;
  try {
    switch (def.type) {
      case 'u': {
        std::size_t pos = 0;
        const unsigned long long v = std::stoull(raw, &pos);
        if (pos != raw.size()) throw ConfigError("");
        return v;
      }
      case 'd': {
        std::size_t pos = 0;
        const double v = std::stod(raw, &pos);
        if (pos != raw.size()) throw ConfigError("");
        return v;
      }
      case 'b': {
        if (raw == "true" || raw == "1" || raw == "yes" || raw == "on") return true;
        if (raw == "false" || raw == "0" || raw == "no" || raw == "off") return false;
        throw ConfigError("");
      }
      case 'l': {
        json arr = json::array();
        std::size_t start = 0;
        while (start <= raw.size()) {
          const std::size_t comma = raw.find(',', start);
          const std::string part = raw.substr(
              start, comma == std::string::npos ? std::string::npos : comma - start);
          if (!part.empty()) arr.push_back(part);
          if (comma == std::string::npos) break;
          start = comma + 1;
        }
        return arr;
      }
      default:
        return raw;
    }
  } catch (...) {
    throw ConfigError("invalid value '" + raw + "' for " + where);
  }
}

struct ConfigCli {
  std::string config_path;
  std::string out_flag;
  std::string preset;
  json patch = json::object();
};

void add_config_flags(CLI::App* cmd, ConfigCli& cc, bool with_preset) {
  cmd->add_option("--config", cc.config_path, "JSON run configuration file")->take_last();
  cmd->add_option("--out", cc.out_flag, "output directory (overrides config out_dir)")
      ->take_last();
  if (with_preset) {
    cmd->add_option("--preset", cc.preset, "named full-scale study configuration")->take_last();
  }
  for (const FlagDef& def : kFlagDefs) {
    cmd->add_option_function<std::string>(
           def.flag,
           [&cc, &def](const std::string& raw) {
             cc.patch[def.table][def.key] = flag_value(raw, def);
           },
           def.help)
        ->take_last();
  }
  // sugar aliases for the common sweep axes
  cmd->add_option_function<std::string>(
      "--method", [&cc](const std::string& v) { cc.patch["method"]["kind"] = v; },
      "alias for --method.kind")->take_last();
  cmd->add_option_function<std::string>(
      "--bins",
      [&cc](const std::string& v) {
        cc.patch["method"]["bins"] = flag_value(v, FlagDef{"--bins", "", "", 'u', ""});
      },
      "alias for --method.bins")->take_last();
  cmd->add_option_function<std::string>(
      "--rate",
      [&cc](const std::string& v) {
        cc.patch["method"]["rate"] = flag_value(v, FlagDef{"--rate", "", "", 'u', ""});
      },
      "alias for --method.rate")->take_last();
  cmd->add_option_function<std::string>(
      "--rank",
      [&cc](const std::string& v) {
        cc.patch["method"]["rank"] = flag_value(v, FlagDef{"--rank", "", "", 'u', ""});
      },
      "alias for --method.rank")->take_last();
  cmd->add_flag_callback(
      "--shared", [&cc] { cc.patch["method"]["shared"] = true; }, "share modules across blocks");
  cmd->add_flag_callback(
      "--no-shared", [&cc] { cc.patch["method"]["shared"] = false; },
      "give every block its own modules");
}

// ---------------------------------------------------------------------------
// presets: the full-scale study grid at D=768 with 12 blocks

struct Preset {
  std::size_t classes;
  Method method;
  bool shared;
  std::size_t rate, bins, rank;
  const char* insertions;  // nullptr → default
};

const std::map<std::string, Preset>& preset_table() {
  static const std::map<std::string, Preset> presets = {
      {"table1-full", {4, Method::full_finetune, true, 256, 8, 6, nullptr}},
      {"table1-probe", {4, Method::linear_probe, true, 256, 8, 6, nullptr}},
      {"table1-adapter256", {4, Method::adapter, true, 256, 8, 6, nullptr}},
      {"table1-adapter128", {4, Method::adapter, true, 128, 8, 6, nullptr}},
      {"table1-adapter64", {4, Method::adapter, true, 64, 8, 6, nullptr}},
      {"table1-hpt4", {4, Method::hpt, true, 256, 4, 6, nullptr}},
      {"table1-hpt8", {4, Method::hpt, true, 256, 8, 6, nullptr}},
      {"table1-hpt16", {4, Method::hpt, true, 256, 16, 6, nullptr}},
      {"table2-full", {5, Method::full_finetune, true, 256, 8, 6, nullptr}},
      {"table2-probe", {5, Method::linear_probe, true, 256, 8, 6, nullptr}},
      {"table2-adapter256", {5, Method::adapter, false, 256, 8, 6, nullptr}},
      {"table2-adapter128", {5, Method::adapter, false, 128, 8, 6, nullptr}},
      {"table2-adapter64", {5, Method::adapter, false, 64, 8, 6, nullptr}},
      {"table2-hpt4", {5, Method::hpt, false, 256, 4, 6, nullptr}},
      {"table2-hpt8", {5, Method::hpt, false, 256, 8, 6, nullptr}},
      {"table2-hpt16", {5, Method::hpt, false, 256, 16, 6, nullptr}},
      {"table3-lora6", {4, Method::lora, true, 256, 8, 6, nullptr}},
      {"table3-lora12", {4, Method::lora, true, 256, 8, 12, nullptr}},
      {"table3-ssf-ln", {4, Method::ssf, true, 256, 8, 6, "ln1"}},
      {"table3-ssf-mhsa", {4, Method::ssf, true, 256, 8, 6, "ln1,qkv,proj"}},
      {"table3-ssf-all", {4, Method::ssf, true, 256, 8, 6, "ln1,qkv,proj,ln2,fc1,fc2"}},
  };
  return presets;
}

void apply_preset(const std::string& name, AppConfig& cfg) {
  const auto& presets = preset_table();
  const auto it = presets.find(name);
  if (it == presets.end()) {
    std::string names;
    for (const auto& [k, unused] : presets) names += "\n  " + k;
    throw ConfigError("unknown preset '" + name + "'; available presets:" + names);
  }
  const Preset& p = it->second;
  cfg.model.dim = 768;
  cfg.model.heads = 12;
  cfg.model.blocks = 12;
  cfg.model.feat = 16;
  cfg.model.max_seq = 32;
  cfg.model.classes = p.classes;
  cfg.method.method = p.method;
  cfg.method.shared = p.shared;
  cfg.method.rate = p.rate;
  cfg.method.bins = p.bins;
  cfg.method.rank = p.rank;
  cfg.method.placement = HistPlacement::parallel_mhsa;
  if (p.insertions != nullptr) {
    json arr = flag_value(p.insertions, FlagDef{"--preset", "", "", 'l', ""});
    std::set<std::string> points;
    for (const auto& e : arr) points.insert(e.get<std::string>());
    cfg.method.insertions = std::move(points);
  }
}

// ---------------------------------------------------------------------------
// shared command plumbing

AppConfig assemble_config(const ConfigCli& cc, const std::string& command,
                          const json* base = nullptr) {
  AppConfig cfg;
  if (base != nullptr) apply_config_json(*base, cfg);
  if (!cc.preset.empty()) apply_preset(cc.preset, cfg);
  if (!cc.config_path.empty()) apply_config_file(cc.config_path, cfg);
  apply_config_json(cc.patch, cfg);

  if (!cc.out_flag.empty()) {
    cfg.out_dir = cc.out_flag;
  } else if (cfg.out_dir.empty()) {
    const char* root = std::getenv("HPT_OUT_ROOT");
    cfg.out_dir = (root != nullptr ? std::string(root) : std::string("runs")) + "/" + command;
  }

  if (!cfg.lr_explicit && cfg.method.method == Method::full_finetune) {
    cfg.train.lr = 1e-5;  // full fine-tuning wants the smaller default step
  }
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!os) throw IoError("failed writing '" + path.string() + "'");
}

fs::path prepare_out_dir(const AppConfig& cfg) {
  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  if (ec) throw IoError("cannot create output directory '" + cfg.out_dir + "': " + ec.message());
  return fs::path(cfg.out_dir);
}

void write_resolved(const AppConfig& cfg, const fs::path& out) {
  write_text(out / "resolved_config.json", resolved_config_json(cfg).dump(2) + "\n");
}

DatasetBundle load_or_generate(const AppConfig& cfg) {
  if (cfg.data_dir.empty()) return gen_synthetic(cfg.data);
  const fs::path dir(cfg.data_dir);
  DatasetBundle bundle;
  std::size_t classes = 0;
  const auto read_split = [&](const char* name, Split& split) {
    const fs::path p = dir / (std::string(name) + ".ptds");
    auto [s, c] = read_dataset(p.string());
    if (classes == 0) classes = c;
    if (c != classes) throw CompatError("splits disagree on class count under '" + dir.string() + "'");
    split = std::move(s);
  };
  read_split("train", bundle.train);
  read_split("val", bundle.val);
  read_split("test", bundle.test);
  bundle.classes = classes;
  bundle.manifest = json{{"dir", cfg.data_dir}}.dump(2);
  return bundle;
}

void check_data_model_fit(const AppConfig& cfg, const DatasetBundle& data) {
  if (data.classes != cfg.model.classes) {
    throw ConfigError("model.classes=" + std::to_string(cfg.model.classes) +
                      " but the dataset has " + std::to_string(data.classes) + " classes");
  }
  if (data.train.seq() > cfg.model.max_seq) {
    throw ConfigError("sequence length " + std::to_string(data.train.seq()) +
                      " exceeds model.max_seq=" + std::to_string(cfg.model.max_seq));
  }
  if (data.train.feat() != cfg.model.feat) {
    throw ConfigError("model.feat=" + std::to_string(cfg.model.feat) + " but frames carry " +
                      std::to_string(data.train.feat()) + " features");
  }
}

// ---------------------------------------------------------------------------
// subcommands

int cmd_gen_data(const ConfigCli& cc) {
  AppConfig cfg = assemble_config(cc, "gen-data");
  if (!cfg.data_dir.empty()) {
    throw ConfigError("gen-data needs a generator spec, not data.dir");
  }
  DatasetBundle data = gen_synthetic(cfg.data);
  const fs::path out = prepare_out_dir(cfg);
  write_dataset((out / "train.ptds").string(), data.train, data.classes);
  write_dataset((out / "val.ptds").string(), data.val, data.classes);
  write_dataset((out / "test.ptds").string(), data.test, data.classes);
  write_text(out / "manifest.json", data.manifest + "\n");
  write_resolved(cfg, out);
  std::cout << "wrote " << data.train.size() << "/" << data.val.size() << "/" << data.test.size()
            << " samples to " << out.string() << "\n";
  return 0;
}

int cmd_train(const ConfigCli& cc) {
  AppConfig cfg = assemble_config(cc, "train");
  DatasetBundle data = load_or_generate(cfg);
  check_data_model_fit(cfg, data);

  Rng rng(cfg.train.seed);
  EncoderModel model(cfg.model, cfg.method, rng);
  const fs::path out = prepare_out_dir(cfg);
  write_resolved(cfg, out);

  RunReport report = train(model, data, cfg.train);

  write_loss_csv((out / "loss.csv").string(), report);
  write_text(out / "report.json", run_report_json(report) + "\n");
  save_checkpoint(model, (out / "checkpoint.hpta").string(),
                  resolved_config_json(cfg).dump(2));

  std::cout << "method=" << to_string(cfg.method.method) << " seed=" << cfg.train.seed
            << " epochs=" << report.stopping_epoch << " best_epoch=" << report.best_epoch
            << " val_loss=" << report.best_val_loss << " test_acc=" << report.test_accuracy
            << "\n"
            << "artifacts in " << out.string() << "\n";
  return 0;
}

int cmd_eval(const ConfigCli& cc, const std::string& checkpoint, const std::string& split_name) {
  if (split_name != "train" && split_name != "val" && split_name != "test") {
    throw ConfigError("--split must be one of train|val|test");
  }
  const json manifest = parse_json_text(read_checkpoint_manifest(checkpoint), checkpoint);
  AppConfig cfg = assemble_config(cc, "eval", &manifest);

  Rng rng(cfg.train.seed);
  EncoderModel model(cfg.model, cfg.method, rng);
  load_checkpoint(model, checkpoint);

  DatasetBundle data = load_or_generate(cfg);
  check_data_model_fit(cfg, data);
  const Split& split = split_name == "train" ? data.train
                       : split_name == "val" ? data.val
                                             : data.test;
  const auto [loss, acc] = evaluate(model, split);

  const fs::path out = prepare_out_dir(cfg);
  write_resolved(cfg, out);
  char buf[160];
  std::snprintf(buf, sizeof(buf), "split=%s loss=%.9g accuracy=%.9g samples=%zu\n",
                split_name.c_str(), loss, acc, split.size());
  write_text(out / "eval.json",
             json{{"split", split_name}, {"loss", loss}, {"accuracy", acc}}.dump(2) + "\n");
  std::cout << buf;
  return 0;
}

int cmd_count_params(const ConfigCli& cc, bool trainable_only) {
  AppConfig cfg = assemble_config(cc, "count-params");
  Rng rng(cfg.train.seed);
  EncoderModel model(cfg.model, cfg.method, rng);
  ParamAudit audit = count_params(model, trainable_only);

  std::cout << audit_table_string(audit);
  if (cfg.model.dim == 768 && cfg.model.blocks == 12) {
    // the published budgets carry one column per head width; show both
    for (const std::size_t classes : {std::size_t{4}, std::size_t{5}}) {
      ModelConfig mc = cfg.model;
      mc.classes = classes;
      const auto ref = reference_budget(mc, cfg.method);
      if (!ref) continue;
      const double count = static_cast<double>(closed_form_trainable(mc, cfg.method));
      char buf[160];
      std::snprintf(buf, sizeof(buf), "column %zu-class: %s → %.0f vs reference %g (%+.2f%%)\n",
                    classes, ref->row.c_str(), count, ref->value,
                    100.0 * (count - ref->value) / ref->value);
      std::cout << buf;
    }
  }

  const fs::path out = prepare_out_dir(cfg);
  write_resolved(cfg, out);
  write_text(out / "audit.csv", audit_csv_string(audit));
  return 0;
}

int cmd_grad_check(const ConfigCli& cc, bool inject_fault) {
  AppConfig cfg = assemble_config(cc, "grad-check");
  if (inject_fault) testhook::set_backward_fault(true);

  struct Family {
    std::string name;
    double err;
  };
  std::vector<Family> rows;

  {
    Rng rng(1);
    Linear lin("linear", 3, 4);
    kaiming_uniform_init(lin, rng);
    Parameter x("x", Tensor(Shape{2, 4}, 0.0));
    for (double& v : x.value.values()) v = rng.uniform(-1, 1);
    const auto f = [&] { return sum(linear_forward(lin, x.value)); };
    rows.push_back({"linear", grad_check(f, std::vector<Parameter*>{&lin.weight, &lin.bias, &x})});
  }
  {
    Rng rng(2);
    LayerNormParams ln("ln", 5);
    Parameter x("x", Tensor(Shape{3, 5}, 0.0));
    for (double& v : x.value.values()) v = rng.uniform(-2, 2);
    for (double& v : ln.gain.value.values()) v = rng.uniform(0.5, 1.5);
    for (double& v : ln.bias.value.values()) v = rng.uniform(-0.3, 0.3);
    const auto f = [&] { return sum(layer_norm(x.value, ln.gain.value, ln.bias.value)); };
    rows.push_back(
        {"layer_norm", grad_check(f, std::vector<Parameter*>{&ln.gain, &ln.bias, &x})});
  }
  {
    Rng rng(3);
    MhsaLayer mhsa("mhsa", 8, 2);
    kaiming_uniform_init(mhsa.qkv, rng);
    kaiming_uniform_init(mhsa.proj, rng);
    Parameter x("x", Tensor(Shape{3, 8}, 0.0));
    for (double& v : x.value.values()) v = rng.uniform(-1, 1);
    const auto f = [&] { return sum(mhsa_forward(mhsa, x.value)); };
    rows.push_back({"mhsa", grad_check(f, std::vector<Parameter*>{&mhsa.qkv.weight,
                                                                  &mhsa.qkv.bias,
                                                                  &mhsa.proj.weight,
                                                                  &mhsa.proj.bias, &x})});
  }
  {
    Rng rng(4);
    FfnLayer ffn("ffn", 6);
    kaiming_uniform_init(ffn.fc1, rng);
    kaiming_uniform_init(ffn.fc2, rng);
    Parameter x("x", Tensor(Shape{2, 6}, 0.0));
    for (double& v : x.value.values()) v = rng.uniform(-1, 1);
    const auto f = [&] { return sum(ffn_forward(ffn, x.value)); };
    rows.push_back({"ffn", grad_check(f, std::vector<Parameter*>{&ffn.fc1.weight, &ffn.fc1.bias,
                                                                 &ffn.fc2.weight, &ffn.fc2.bias,
                                                                 &x})});
  }
  {
    Rng rng(5);
    Adapter ad("adapter", 6, 2);
    adapter_init(ad, rng);
    for (double& v : ad.up.weight.value.values()) v = rng.uniform(-0.5, 0.5);
    Parameter x("x", Tensor(Shape{3, 6}, 0.0));
    for (double& v : x.value.values()) v = rng.uniform(-1, 1);
    const auto f = [&] { return sum(adapter_forward(ad, x.value)); };
    rows.push_back({"adapter", grad_check(f, std::vector<Parameter*>{&ad.down.weight,
                                                                     &ad.down.bias,
                                                                     &ad.up.weight, &ad.up.bias,
                                                                     &x})});
  }
  {
    Rng rng(6);
    LoraAdapter lora("lora", 6, 2);
    lora_init(lora, rng);
    for (double& v : lora.b.value.values()) v = rng.uniform(-0.5, 0.5);
    Parameter x("x", Tensor(Shape{3, 6}, 0.0));
    for (double& v : x.value.values()) v = rng.uniform(-1, 1);
    const auto f = [&] { return sum(lora_forward(lora, x.value)); };
    rows.push_back({"lora", grad_check(f, std::vector<Parameter*>{&lora.a, &lora.b, &x})});
  }
  {
    Rng rng(7);
    SsfLayer ssf("ssf", 6);
    for (double& v : ssf.scale.value.values()) v = rng.uniform(0.5, 1.5);
    for (double& v : ssf.shift.value.values()) v = rng.uniform(-0.5, 0.5);
    Parameter x("x", Tensor(Shape{3, 6}, 0.0));
    for (double& v : x.value.values()) v = rng.uniform(-1, 1);
    const auto f = [&] { return sum(ssf_apply(ssf, x.value)); };
    rows.push_back({"ssf", grad_check(f, std::vector<Parameter*>{&ssf.scale, &ssf.shift, &x})});
  }
  {
    Rng rng(8);
    HistogramLayer hist("hist", 4, 8);
    hist_init(hist, rng);
    Parameter x("x", Tensor(Shape{3, 8}, 0.0));
    for (double& v : x.value.values()) v = rng.uniform(-1, 1);
    const auto f = [&] { return sum(hist_forward(hist, x.value)); };
    rows.push_back({"hist_forward", grad_check(f, std::vector<Parameter*>{&hist.proj_weight,
                                                                          &hist.centers,
                                                                          &hist.widths, &x})});
  }
  {
    ModelConfig mc;
    mc.dim = 8;
    mc.heads = 2;
    mc.blocks = 1;
    mc.feat = 4;
    mc.max_seq = 4;
    mc.classes = 3;
    Rng rng(9);
    EncoderModel m(mc, {.method = Method::hpt, .bins = 4, .placement = HistPlacement::both}, rng);
    Parameter x("x", Tensor(Shape{3, 8}, 0.0));
    for (double& v : x.value.values()) v = rng.uniform(-1, 1);
    const auto f = [&] { return sum(block_forward(*m.blocks[0], x.value)); };
    std::vector<Parameter*> params = m.trainable_params();
    params.push_back(&x);
    rows.push_back({"block", grad_check(f, params)});
  }
  {
    ModelConfig mc;
    mc.dim = 8;
    mc.heads = 2;
    mc.blocks = 1;
    mc.feat = 4;
    mc.max_seq = 4;
    mc.classes = 3;
    Rng rng(10);
    EncoderModel m(mc, {.method = Method::hpt, .bins = 4}, rng);
    for (Parameter* p : m.all_params()) p->set_trainable(true);  // cover the backbone too
    Tensor frames(Shape{3, 4}, 0.0);
    for (double& v : frames.values()) v = rng.uniform(-1, 1);
    const auto f = [&] { return cross_entropy(model_forward(m, frames), 1); };
    rows.push_back({"model_loss", grad_check(f, m.trainable_params())});
  }

  if (inject_fault) testhook::set_backward_fault(false);

  bool ok = true;
  for (const Family& row : rows) {
    const bool pass = row.err < 1e-5;
    ok = ok && pass;
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%-12s  %.3e  %s\n", row.name.c_str(), row.err,
                  pass ? "ok" : "FAIL");
    std::cout << buf;
  }
  const fs::path out = prepare_out_dir(cfg);
  write_resolved(cfg, out);
  std::cout << (ok ? "all gradient families ok\n" : "gradient check FAILED\n");
  return ok ? 0 : 1;
}

int cmd_similarity(const ConfigCli& cc, const std::string& ckpt_a, const std::string& ckpt_b,
                   const std::string& split_name) {
  if (split_name != "train" && split_name != "val" && split_name != "test") {
    throw ConfigError("--split must be one of train|val|test");
  }
  const json manifest_a = parse_json_text(read_checkpoint_manifest(ckpt_a), ckpt_a);
  const json manifest_b = parse_json_text(read_checkpoint_manifest(ckpt_b), ckpt_b);
  AppConfig cfg = assemble_config(cc, "similarity", &manifest_a);

  AppConfig cfg_b;
  apply_config_json(manifest_b, cfg_b);

  Rng rng_a(cfg.train.seed);
  EncoderModel a(cfg.model, cfg.method, rng_a);
  load_checkpoint(a, ckpt_a);
  Rng rng_b(cfg_b.train.seed);
  EncoderModel b(cfg_b.model, cfg_b.method, rng_b);
  load_checkpoint(b, ckpt_b);

  DatasetBundle data = load_or_generate(cfg);
  check_data_model_fit(cfg, data);
  const Split& split = split_name == "train" ? data.train
                       : split_name == "val" ? data.val
                                             : data.test;

  const SimilarityReport report = similarity_report(a, b, split);
  std::cout << similarity_table_string(report);

  const fs::path out = prepare_out_dir(cfg);
  write_resolved(cfg, out);
  write_text(out / "similarity.csv", similarity_csv_string(report));
  std::cout << "wrote " << (out / "similarity.csv").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"histogram-based parameter-efficient tuning toolkit"};
  app.require_subcommand(1);

  ConfigCli gen_cc, train_cc, eval_cc, count_cc, grad_cc, sim_cc;
  std::string eval_ckpt, eval_split = "test";
  std::string sim_a, sim_b, sim_split = "val";
  bool trainable_only = false;
  bool inject_fault = false;

  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  add_config_flags(gen, gen_cc, false);
  gen->add_option_function<std::string>(
      "--seed",
      [&gen_cc](const std::string& v) {
        gen_cc.patch["data"]["seed"] = flag_value(v, FlagDef{"--seed", "", "", 'u', ""});
      },
      "alias for --data.seed")->take_last();

  CLI::App* tr = app.add_subcommand("train", "train a model and write run artifacts");
  add_config_flags(tr, train_cc, true);
  tr->add_option_function<std::string>(
      "--seed",
      [&train_cc](const std::string& v) {
        train_cc.patch["train"]["seed"] = flag_value(v, FlagDef{"--seed", "", "", 'u', ""});
      },
      "alias for --train.seed")->take_last();

  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  ev->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  ev->add_option("--split", eval_split, "train|val|test (default test)")->take_last();
  add_config_flags(ev, eval_cc, false);

  CLI::App* cp = app.add_subcommand("count-params", "audit parameter counts");
  add_config_flags(cp, count_cc, true);
  cp->add_flag("--trainable-only", trainable_only, "list only trainable modules");

  CLI::App* gc = app.add_subcommand("grad-check", "finite-difference gradient audit");
  add_config_flags(gc, grad_cc, false);
  gc->add_flag("--testhook-backward-fault", inject_fault, "corrupt a backward rule (testing)")
      ->group("");

  CLI::App* sim = app.add_subcommand("similarity", "layer-wise feature similarity of two runs");
  sim->add_option("--checkpoint-a", sim_a, "candidate checkpoint")->required();
  sim->add_option("--checkpoint-b", sim_b, "reference checkpoint")->required();
  sim->add_option("--split", sim_split, "probe split (default val)")->take_last();
  add_config_flags(sim, sim_cc, false);

  try {
    app.parse(argc, argv);
    if (gen->parsed()) return cmd_gen_data(gen_cc);
    if (tr->parsed()) return cmd_train(train_cc);
    if (ev->parsed()) return cmd_eval(eval_cc, eval_ckpt, eval_split);
    if (cp->parsed()) return cmd_count_params(count_cc, trainable_only);
    if (gc->parsed()) return cmd_grad_check(grad_cc, inject_fault);
    if (sim->parsed()) return cmd_similarity(sim_cc, sim_a, sim_b, sim_split);
    return 1;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return 2;
  } catch (const TruncationError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return 2;
  } catch (const CompatError& e) {
    std::cerr << "compatibility error: " << e.what() << "\n";
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
