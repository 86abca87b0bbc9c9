#pragma once

// Layered experiment configuration: [dataset] -> [model] -> [pretrain] ->
// [adapt] -> [runner]. Files are INI-style; any key may also be overridden
// with "section.key=value" strings.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cstdint>
#include <filesystem>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "slarda/adapt.hpp"
#include "slarda/ssl.hpp"

namespace slarda {

struct SyntheticDomain {
  std::string name;
  double shift_magnitude = 0.0;
};

struct ExperimentConfig {
  // [dataset]
  std::string family = "synthetic";
  std::string data_root = "data";
  std::vector<std::string> domains;  ///< file families: directory names under data_root
  std::vector<SyntheticDomain> synthetic_domains{{"src", 0.0}, {"tgt", 0.3}};
  SyntheticShiftSpec synthetic;
  std::string source = "src";
  std::string target = "tgt";
  // [model]
  ArchitectureConfig arch = synthetic_architecture();
  // [pretrain]
  PretrainConfig pretrain;
  CPCConfig cpc;
  // [adapt]
  AdaptConfig adapt;
  // [runner]
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::size_t workers = 1;
};

/// Per-family defaults. The real-data families carry the published protocol
/// scalars; the synthetic family is sized for a single CPU core.
inline ExperimentConfig default_config(const std::string& family) {
  ExperimentConfig c;
  c.family = family;
  c.arch = architecture_for(family);
  c.adapt.lambda = 0.005;
  c.adapt.alpha = 0.996;
  c.adapt.zeta = 0.9;
  c.pretrain.adam.weight_decay = 3e-4;
  c.adapt.disc_adam.weight_decay = 3e-4;
  c.adapt.enc_adam.weight_decay = 3e-4;
  auto set_lr = [&](double lr) {
    c.pretrain.adam.learning_rate = lr;
    c.adapt.disc_adam.learning_rate = lr;
    c.adapt.enc_adam.learning_rate = lr;
  };
  auto set_batch = [&](std::size_t b) {
    c.pretrain.batch_size = b;
    c.adapt.batch_size = b;
  };
  if (family == "har") {
    set_batch(128);
    set_lr(1e-4);
    c.domains = {"A", "B", "C", "D"};
  } else if (family == "ssc") {
    set_batch(128);
    set_lr(1e-3);
    c.domains = {"EDF", "SH1", "SH2"};
  } else if (family == "mfd") {
    set_batch(512);
    set_lr(1e-4);
    c.domains = {"H", "I", "J", "K"};
  } else if (family == "synthetic") {
    set_batch(32);
    set_lr(1e-3);
    c.adapt.disc_adam.learning_rate = 1e-4;
    c.adapt.enc_adam.learning_rate = 1e-4;
    c.pretrain.epochs = 20;
    c.adapt.iterations = 1000;
    c.synthetic.base_frequencies = {4.0, 8.0, 14.0};
    c.synthetic.frequency_jitter = 0.2;
    c.synthetic.shift_magnitude = shift_preset("medium");
  } else {
    throw ConfigError("unknown dataset family '" + family + "'");
  }
  if (!c.domains.empty()) {
    c.source = c.domains[0];
    c.target = c.domains[1];
  }
  return c;
}

namespace detail {

inline bool parse_bool(const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw ConfigError("not a boolean: '" + v + "'");
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string tok;
  std::istringstream is(v);
  while (std::getline(is, tok, ',')) {
    tok = trim(tok);
    if (!tok.empty()) out.push_back(tok);
  }
  return out;
}

inline std::vector<std::size_t> parse_size_list(const std::string& v) {
  std::vector<std::size_t> out;
  for (const auto& t : split_list(v)) out.push_back(std::stoul(t));
  return out;
}

}  // namespace detail

/// Applies one setting. Unknown keys are rejected.
inline void set_config_value(ExperimentConfig& c, const std::string& section, const std::string& key,
                             const std::string& value) {
  using detail::parse_bool;
  const auto v = trim(value);
  auto d = [&] { return std::stod(v); };
  auto u = [&] { return static_cast<std::size_t>(std::stoull(v)); };
  try {
    if (section == "dataset") {
      if (key == "family") {
        // switching family resets every family-dependent default
        c = default_config(v);
      } else if (key == "data_root") c.data_root = v;
      else if (key == "domains") {
        // parse fully before assigning so a bad entry leaves c untouched
        std::vector<std::string> files;
        std::vector<SyntheticDomain> synth;
        for (const auto& tok : detail::split_list(v)) {
          const auto colon = tok.find(':');
          if (colon == std::string::npos) {
            files.push_back(tok);
          } else {
            const auto mag = trim(tok.substr(colon + 1));
            const bool numeric = !mag.empty() && (std::isdigit(static_cast<unsigned char>(mag[0])) || mag[0] == '.');
            synth.push_back({trim(tok.substr(0, colon)), numeric ? std::stod(mag) : shift_preset(mag)});
          }
        }
        c.domains = std::move(files);
        c.synthetic_domains = std::move(synth);
      } else if (key == "source") c.source = v;
      else if (key == "target") c.target = v;
      else {
        std::map<std::string, std::string> kv{{key, v}};
        apply_synthetic_keys(c.synthetic, kv);
        if (key == "num_classes") c.arch.num_classes = c.synthetic.num_classes;
        if (key == "channels") c.arch.encoder.input_channels = c.synthetic.channels;
        if (key == "length") c.arch.input_length = c.synthetic.length;
        if (key == "shift_magnitude")
          for (auto& dom : c.synthetic_domains)
            if (dom.name == c.target) dom.shift_magnitude = c.synthetic.shift_magnitude;
      }
    } else if (section == "model") {
      auto& a = c.arch;
      if (key == "input_length") a.input_length = u();
      else if (key == "num_classes") a.num_classes = u();
      else if (key == "input_channels") a.encoder.input_channels = u();
      else if (key == "encoder_layers") a.encoder.num_layers = u();
      else if (key == "encoder_channels") a.encoder.base_channels = u();
      else if (key == "encoder_widths") a.encoder.widths = detail::parse_size_list(v);
      else if (key == "kernel_size") a.encoder.kernel_size = u();
      else if (key == "stride") a.encoder.stride = u();
      else if (key == "padding") a.encoder.padding = u();
      else if (key == "gru_hidden") a.context.hidden_dim = u();
      else if (key == "gru_layers") a.context.num_layers = u();
      else if (key == "disc_hidden") a.discriminator.hidden_dim = u();
      else if (key == "disc_layers") a.discriminator.num_layers = u();
      else if (key == "disc_heads") a.discriminator.num_heads = u();
      else if (key == "disc_feedforward") a.discriminator.feedforward_dim = u();
      else if (key == "fc_disc_hidden") a.fc_disc_hidden = u();
      else if (key == "horizon") {
        a.horizon = u();
        c.cpc.horizon = a.horizon;
      } else throw ConfigError("unknown key");
    } else if (section == "pretrain") {
      auto& p = c.pretrain;
      if (key == "epochs") p.epochs = u();
      else if (key == "batch_size") p.batch_size = u();
      else if (key == "learning_rate") p.adam.learning_rate = d();
      else if (key == "weight_decay") p.adam.weight_decay = d();
      else if (key == "beta1") p.adam.beta1 = d();
      else if (key == "beta2") p.adam.beta2 = d();
      else if (key == "cpc_weight") p.cpc_weight = d();
      else if (key == "min_t") c.cpc.min_t = u();
      else throw ConfigError("unknown key");
    } else if (section == "adapt") {
      auto& a = c.adapt;
      if (key == "iterations") a.iterations = u();
      else if (key == "batch_size") a.batch_size = u();
      else if (key == "learning_rate") a.disc_adam.learning_rate = a.enc_adam.learning_rate = d();
      else if (key == "disc_learning_rate") a.disc_adam.learning_rate = d();
      else if (key == "enc_learning_rate") a.enc_adam.learning_rate = d();
      else if (key == "weight_decay") a.disc_adam.weight_decay = a.enc_adam.weight_decay = d();
      else if (key == "beta1") a.disc_adam.beta1 = a.enc_adam.beta1 = d();
      else if (key == "beta2") a.disc_adam.beta2 = a.enc_adam.beta2 = d();
      else if (key == "lambda") a.lambda = d();
      else if (key == "alpha") a.alpha = d();
      else if (key == "zeta") a.zeta = d();
      else if (key == "train_classifier") a.train_classifier = parse_bool(v);
      else if (key == "eval_every") a.eval_every = u();
      else if (key == "discriminator") {
        if (v == "attention") a.discriminator = DiscriminatorKind::Attention;
        else if (v == "pooled") a.discriminator = DiscriminatorKind::Pooled;
        else throw ConfigError("discriminator must be attention or pooled");
      } else throw ConfigError("unknown key");
    } else if (section == "runner") {
      if (key == "seeds") {
        c.seeds.clear();
        for (const auto& t : detail::split_list(v)) c.seeds.push_back(std::stoull(t));
      } else if (key == "workers") c.workers = u();
      else throw ConfigError("unknown key");
    } else {
      throw ConfigError("unknown section");
    }
  } catch (const ConfigError& e) {
    throw ConfigError("config [" + section + "] " + key + " = " + v + ": " + e.what());
  } catch (const std::exception& e) {
    throw ConfigError("config [" + section + "] " + key + " = " + v + ": invalid value (" + e.what() + ")");
  }
}

/// "section.key=value"
inline void apply_override(ExperimentConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq)
    throw ConfigError("override '" + assignment + "' is not of the form section.key=value");
  set_config_value(c, trim(assignment.substr(0, dot)), trim(assignment.substr(dot + 1, eq - dot - 1)),
                   assignment.substr(eq + 1));
}

/// Reads an INI file. The dataset family is applied first so that it sets the
/// defaults the remaining keys refine.
inline ExperimentConfig load_config(const std::filesystem::path& path) {
  boost::property_tree::ptree pt;
  try {
    boost::property_tree::read_ini(path.string(), pt);
  } catch (const std::exception& e) {
    throw ConfigError("cannot read config " + path.string() + ": " + e.what());
  }
  ExperimentConfig c = default_config(pt.get<std::string>("dataset.family", "synthetic"));
  for (const char* section : {"dataset", "model", "pretrain", "adapt", "runner"}) {
    auto child = pt.get_child_optional(section);
    if (!child) continue;
    // shift_magnitude retargets the domain named by `target`. An explicit
    // domains list carries its own magnitudes and wins, so apply
    // shift_magnitude before it; otherwise after target is known.
    const bool is_dataset = std::string(section) == "dataset";
    const auto shift = is_dataset ? child->get_optional<std::string>("shift_magnitude") : boost::none;
    const bool explicit_domains = is_dataset && child->count("domains") > 0;
    if (shift && explicit_domains) set_config_value(c, section, "shift_magnitude", *shift);
    for (const auto& [key, node] : *child) {
      if (is_dataset && (key == "family" || key == "shift_magnitude")) continue;
      set_config_value(c, section, key, node.data());
    }
    if (shift && !explicit_domains) set_config_value(c, section, "shift_magnitude", *shift);
  }
  for (const auto& sec : pt) {
    const auto& n = sec.first;
    if (n != "dataset" && n != "model" && n != "pretrain" && n != "adapt" && n != "runner")
      throw ConfigError("config: unknown section [" + n + "]");
  }
  return c;
}

/// Canonical text form; every field that influences results appears.
inline std::string canonical_text(const ExperimentConfig& c) {
  std::ostringstream os;
  os.precision(17);
  const auto& a = c.arch;
  os << "[dataset]\nfamily = " << c.family << "\ndata_root = " << c.data_root << "\nsource = " << c.source
     << "\ntarget = " << c.target << "\ndomains = ";
  if (c.family == "synthetic") {
    for (std::size_t i = 0; i < c.synthetic_domains.size(); ++i)
      os << (i ? ", " : "") << c.synthetic_domains[i].name << ':' << c.synthetic_domains[i].shift_magnitude;
    os << '\n' << format_synthetic_spec(c.synthetic);
  } else {
    for (std::size_t i = 0; i < c.domains.size(); ++i) os << (i ? ", " : "") << c.domains[i];
    os << '\n';
  }
  os << "\n[model]\ninput_length = " << a.input_length << "\nnum_classes = " << a.num_classes
     << "\ninput_channels = " << a.encoder.input_channels << "\nencoder_layers = " << a.encoder.num_layers
     << "\nencoder_channels = " << a.encoder.base_channels << "\nkernel_size = " << a.encoder.kernel_size
     << "\nstride = " << a.encoder.stride << "\npadding = " << a.encoder.pad();
  if (!a.encoder.widths.empty()) {
    os << "\nencoder_widths = ";
    for (std::size_t i = 0; i < a.encoder.widths.size(); ++i) os << (i ? "," : "") << a.encoder.widths[i];
  }
  os << "\ngru_hidden = " << a.context.hidden_dim << "\ngru_layers = " << a.context.num_layers
     << "\ndisc_hidden = " << a.discriminator.hidden_dim << "\ndisc_layers = " << a.discriminator.num_layers
     << "\ndisc_heads = " << a.discriminator.num_heads << "\ndisc_feedforward = " << a.discriminator.feedforward_dim
     << "\nfc_disc_hidden = " << a.fc_disc_hidden << "\nhorizon = " << a.horizon;
  const auto& p = c.pretrain;
  os << "\n\n[pretrain]\nepochs = " << p.epochs << "\nbatch_size = " << p.batch_size
     << "\nlearning_rate = " << p.adam.learning_rate << "\nweight_decay = " << p.adam.weight_decay
     << "\nbeta1 = " << p.adam.beta1 << "\nbeta2 = " << p.adam.beta2 << "\ncpc_weight = " << p.cpc_weight
     << "\nmin_t = " << c.cpc.min_t;
  const auto& d = c.adapt;
  os << "\n\n[adapt]\niterations = " << d.iterations << "\nbatch_size = " << d.batch_size
     << "\ndisc_learning_rate = " << d.disc_adam.learning_rate << "\nenc_learning_rate = " << d.enc_adam.learning_rate
     << "\nweight_decay = " << d.enc_adam.weight_decay << "\nbeta1 = " << d.enc_adam.beta1
     << "\nbeta2 = " << d.enc_adam.beta2 << "\nlambda = " << d.lambda << "\nalpha = " << d.alpha
     << "\nzeta = " << d.zeta << "\ntrain_classifier = " << (d.train_classifier ? "true" : "false")
     << "\ndiscriminator = " << (d.discriminator == DiscriminatorKind::Attention ? "attention" : "pooled");
  os << "\n\n[runner]\nseeds = ";
  for (std::size_t i = 0; i < c.seeds.size(); ++i) os << (i ? "," : "") << c.seeds[i];
  os << "\nworkers = " << c.workers << '\n';
  return os.str();
}

/// 64-bit FNV-1a of a string.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

}  // namespace slarda
