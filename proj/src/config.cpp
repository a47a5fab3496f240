// SPDX-License-Identifier: Apache-2.0
#include "normalign/config.hpp"

#include <set>
#include <sstream>

#include "normalign/errors.hpp"

namespace normalign {

namespace {

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

bool is_count(const Json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

// Reads keys out of one JSON object and rejects whatever is left over.
class StrictObject {
 public:
  StrictObject(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  const Json* find(const std::string& key) {
    auto it = j_.find(key);
    if (it == j_.end()) return nullptr;
    seen_.insert(key);
    return &*it;
  }

  std::string at(const std::string& key) const { return join(path_, key); }

  void read(const std::string& key, std::size_t& out) {
    if (const Json* v = find(key)) {
      if (!is_count(*v)) throw ConfigError(at(key), "expected a non-negative integer");
      out = v->get<std::size_t>();
    }
  }
  void read(const std::string& key, std::uint64_t& out, int) {
    if (const Json* v = find(key)) {
      if (!is_count(*v)) throw ConfigError(at(key), "expected a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void read(const std::string& key, double& out) {
    if (const Json* v = find(key)) {
      if (!v->is_number()) throw ConfigError(at(key), "expected a number");
      out = v->get<double>();
    }
  }
  void read(const std::string& key, bool& out) {
    if (const Json* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError(at(key), "expected true or false");
      out = v->get<bool>();
    }
  }
  void read(const std::string& key, std::string& out) {
    if (const Json* v = find(key)) {
      if (!v->is_string()) throw ConfigError(at(key), "expected a string");
      out = v->get<std::string>();
    }
  }
  void read(const std::string& key, std::vector<std::size_t>& out) {
    if (const Json* v = find(key)) {
      if (!v->is_array()) throw ConfigError(at(key), "expected an array of integers");
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i) {
        if (!is_count((*v)[i]))
          throw ConfigError(at(key) + "[" + std::to_string(i) + "]", "expected a non-negative integer");
        out.push_back((*v)[i].get<std::size_t>());
      }
    }
  }
  void read(const std::string& key, std::vector<double>& out) {
    if (const Json* v = find(key)) {
      if (!v->is_array()) throw ConfigError(at(key), "expected an array of numbers");
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i) {
        if (!(*v)[i].is_number()) throw ConfigError(at(key) + "[" + std::to_string(i) + "]", "expected a number");
        out.push_back((*v)[i].get<double>());
      }
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(at(it.key()), "unknown key");
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::vector<ModalitySpec> modalities_from_json(const Json& j, const std::string& path) {
  if (!j.is_array()) throw ConfigError(path, "expected an array of {name, dim}");
  std::vector<ModalitySpec> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    StrictObject o(j[i], path + "[" + std::to_string(i) + "]");
    ModalitySpec m;
    o.read("name", m.name);
    o.read("dim", m.input_dim);
    o.finish();
    out.push_back(m);
  }
  return out;
}

Json modalities_to_json(const std::vector<ModalitySpec>& ms) {
  Json a = Json::array();
  for (const auto& m : ms) a.push_back(to_json(m));
  return a;
}

template <class F>
auto rethrow_contract(const std::string& path, F&& f) {
  try {
    return f();
  } catch (const ContractError& e) {
    throw ConfigError(path, e.what());
  }
}

}  // namespace

Json to_json(const ModalitySpec& m) { return Json{{"name", m.name}, {"dim", m.input_dim}}; }

Json to_json(const DatasetSpec& s) {
  Json scales = Json::object();
  for (const auto& [name, v] : s.norm_scales) scales[name] = v;
  return Json{{"num_source_domains", s.num_source_domains},
              {"modalities", modalities_to_json(s.modalities)},
              {"frames", s.frames},
              {"verb_classes", s.verb_classes},
              {"noun_classes", s.noun_classes},
              {"samples_per_domain", s.samples_per_domain},
              {"shift_magnitude", s.shift_magnitude},
              {"verb_separation", s.verb_separation},
              {"noun_separation", s.noun_separation},
              {"norm_scales", scales},
              {"label_noise", s.label_noise},
              {"seed", s.seed}};
}

DatasetSpec dataset_spec_from_json(const Json& j, const std::string& path) {
  StrictObject o(j, path);
  DatasetSpec s;
  o.read("num_source_domains", s.num_source_domains);
  if (const Json* m = o.find("modalities")) s.modalities = modalities_from_json(*m, o.at("modalities"));
  o.read("frames", s.frames);
  o.read("verb_classes", s.verb_classes);
  o.read("noun_classes", s.noun_classes);
  o.read("samples_per_domain", s.samples_per_domain);
  o.read("shift_magnitude", s.shift_magnitude);
  o.read("verb_separation", s.verb_separation);
  o.read("noun_separation", s.noun_separation);
  if (const Json* ns = o.find("norm_scales")) {
    StrictObject inner(*ns, o.at("norm_scales"));
    s.norm_scales.clear();
    for (auto it = ns->begin(); it != ns->end(); ++it) inner.read(it.key(), s.norm_scales[it.key()]);
    inner.finish();
  }
  o.read("label_noise", s.label_noise);
  o.read("seed", s.seed, 0);
  o.finish();
  s.validate();
  return s;
}

Json stream_arch_to_json(const StreamConfig& c) {
  return Json{{"fusion", to_string(c.fusion)},
              {"extractor_hidden", c.extractor_hidden},
              {"embed_dim", c.embed_dim},
              {"trm_scales", c.trm_scales},
              {"relation_dim", c.relation_dim},
              {"discriminator_hidden", c.discriminator_hidden}};
}

namespace {
void read_arch(StrictObject& o, StreamConfig& c) {
  std::string fusion = to_string(c.fusion);
  o.read("fusion", fusion);
  c.fusion = rethrow_contract(o.at("fusion"), [&] { return fusion_from_string(fusion); });
  o.read("extractor_hidden", c.extractor_hidden);
  o.read("embed_dim", c.embed_dim);
  o.read("trm_scales", c.trm_scales);
  o.read("relation_dim", c.relation_dim);
  o.read("discriminator_hidden", c.discriminator_hidden);
}
}  // namespace

StreamConfig stream_arch_from_json(const Json& j, const std::string& path) {
  StrictObject o(j, path);
  StreamConfig c;
  read_arch(o, c);
  o.finish();
  return c;
}

Json to_json(const StreamConfig& c) {
  Json j{{"modalities", modalities_to_json(c.modalities)}, {"frames", c.frames}};
  const Json arch = stream_arch_to_json(c);
  for (auto it = arch.begin(); it != arch.end(); ++it) j[it.key()] = *it;
  j["verb_classes"] = c.verb_classes;
  j["noun_classes"] = c.noun_classes;
  j["domain_count"] = c.domain_count;
  return j;
}

StreamConfig stream_config_from_json(const Json& j, const std::string& path) {
  StrictObject o(j, path);
  StreamConfig c;
  if (const Json* m = o.find("modalities")) c.modalities = modalities_from_json(*m, o.at("modalities"));
  o.read("frames", c.frames);
  read_arch(o, c);
  o.read("verb_classes", c.verb_classes);
  o.read("noun_classes", c.noun_classes);
  o.read("domain_count", c.domain_count);
  o.finish();
  rethrow_contract(path.empty() ? "<root>" : path, [&] {
    c.validate();
    return 0;
  });
  return c;
}

Json to_json(const LossWeights& w) {
  return Json{{"lambda_rna", w.lambda_rna},         {"lambda_thna", w.lambda_thna},
              {"radius_R", w.radius_R},             {"lambda_mec", w.lambda_mec},
              {"gamma_attentive", w.gamma_attentive}, {"beta_levels", w.beta_levels}};
}

LossWeights loss_weights_from_json(const Json& j, const std::string& path) {
  StrictObject o(j, path);
  LossWeights w;
  o.read("lambda_rna", w.lambda_rna);
  o.read("lambda_thna", w.lambda_thna);
  o.read("radius_R", w.radius_R);
  o.read("lambda_mec", w.lambda_mec);
  o.read("gamma_attentive", w.gamma_attentive);
  std::vector<double> beta(w.beta_levels.begin(), w.beta_levels.end());
  o.read("beta_levels", beta);
  if (beta.size() != 3) throw ConfigError(o.at("beta_levels"), "expected 3 values (frame, relation, video)");
  std::copy(beta.begin(), beta.end(), w.beta_levels.begin());
  o.finish();
  rethrow_contract(path, [&] {
    w.validate();
    return 0;
  });
  return w;
}

Json to_json(const LossMask& m) {
  return Json{{"rna", m.rna},
              {"rna_target", m.rna_target},
              {"adversarial", m.adversarial},
              {"domain_attention", m.domain_attention},
              {"attentive_entropy", m.attentive_entropy},
              {"thna", m.thna},
              {"mec", m.mec}};
}

LossMask loss_mask_from_json(const Json& j, const std::string& path) {
  StrictObject o(j, path);
  LossMask m;
  o.read("rna", m.rna);
  o.read("rna_target", m.rna_target);
  o.read("adversarial", m.adversarial);
  o.read("domain_attention", m.domain_attention);
  o.read("attentive_entropy", m.attentive_entropy);
  o.read("thna", m.thna);
  o.read("mec", m.mec);
  o.finish();
  return m;
}

Json to_json(const TrainConfig& c) {
  Json streams = Json::array();
  for (const auto& s : c.streams) streams.push_back(stream_arch_to_json(s));
  Json j{{"mode", to_string(c.mode)}};
  if (c.mode == TrainMode::Custom) j["custom_mask"] = to_json(c.custom_mask);
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["learning_rate"] = c.learning_rate;
  j["momentum"] = c.momentum;
  j["lr_decay_epochs"] = c.lr_decay_epochs;
  j["lr_decay_factor"] = c.lr_decay_factor;
  j["dropout"] = c.dropout;
  j["weights"] = to_json(c.weights);
  j["streams"] = streams;
  j["thna_single_stream"] = c.thna_single_stream;
  j["mec_target"] = c.mec_target == MecTarget::PerHead ? "per_head" : "action";
  j["eval_split"] = c.eval_split;
  j["seed"] = c.seed;
  return j;
}

TrainConfig train_config_from_json(const Json& j, const std::string& path) {
  StrictObject o(j, path);
  TrainConfig c;
  std::string mode = to_string(c.mode);
  o.read("mode", mode);
  c.mode = rethrow_contract(o.at("mode"), [&] { return train_mode_from_string(mode); });
  if (const Json* m = o.find("custom_mask")) c.custom_mask = loss_mask_from_json(*m, o.at("custom_mask"));
  o.read("epochs", c.epochs);
  o.read("batch_size", c.batch_size);
  o.read("learning_rate", c.learning_rate);
  o.read("momentum", c.momentum);
  o.read("lr_decay_epochs", c.lr_decay_epochs);
  o.read("lr_decay_factor", c.lr_decay_factor);
  o.read("dropout", c.dropout);
  if (const Json* w = o.find("weights")) c.weights = loss_weights_from_json(*w, o.at("weights"));
  if (const Json* s = o.find("streams")) {
    if (!s->is_array() || s->empty()) throw ConfigError(o.at("streams"), "expected a non-empty array");
    c.streams.clear();
    for (std::size_t i = 0; i < s->size(); ++i)
      c.streams.push_back(stream_arch_from_json((*s)[i], o.at("streams") + "[" + std::to_string(i) + "]"));
  }
  o.read("thna_single_stream", c.thna_single_stream);
  std::string mec = "per_head";
  o.read("mec_target", mec);
  if (mec == "per_head")
    c.mec_target = MecTarget::PerHead;
  else if (mec == "action")
    c.mec_target = MecTarget::Action;
  else
    throw ConfigError(o.at("mec_target"), "expected per_head or action");
  o.read("eval_split", c.eval_split);
  o.read("seed", c.seed, 0);
  o.finish();
  c.validate();
  return c;
}

Json to_json(const EvalMetrics& m) {
  return Json{{"samples", m.samples},         {"verb_top1", m.verb_top1},   {"verb_top5", m.verb_top5},
              {"noun_top1", m.noun_top1},     {"noun_top5", m.noun_top5},   {"action_top1", m.action_top1},
              {"action_top5", m.action_top5}, {"agreement", m.agreement}};
}

Json to_json(const EpochRecord& r) {
  Json losses = Json::object();
  for (const auto& [k, v] : r.losses) losses[k] = v;
  Json norms = Json::object();
  for (const auto& [k, v] : r.norms) norms[k] = v;
  return Json{{"epoch", r.epoch},       {"learning_rate", r.learning_rate}, {"grl_lambda", r.grl_lambda},
              {"losses", losses},       {"metrics", to_json(r.metrics)},    {"norms", norms}};
}

std::string report_jsonl(const TrainReport& report) {
  std::string out;
  for (const auto& e : report.epochs) {
    out += to_json(e).dump();
    out += '\n';
  }
  return out;
}

Json report_summary(const TrainReport& report) {
  Json streams = Json::array();
  for (const auto& s : report.streams) streams.push_back(to_json(s));
  Json j{{"header", Json{{"config", to_json(report.config)}, {"weights", to_json(report.config.weights)},
                         {"streams", streams}}}};
  j["epochs_recorded"] = report.epochs.size();
  j["final"] = report.epochs.empty() ? Json() : to_json(report.epochs.back());
  j["target_label_reads"] = report.target_label_reads;
  return j;
}

Json to_json(const PresetResult& r) {
  Json rows = Json::array();
  for (const auto& row : r.rows) {
    Json per_seed = Json::array();
    for (std::size_t i = 0; i < row.per_seed.size(); ++i) {
      Json e = to_json(row.per_seed[i]);
      e["seed"] = row.seeds[i];
      e["final_norm_ratio"] = row.final_norm_ratio[i];
      per_seed.push_back(e);
    }
    rows.push_back(Json{{"row", row.name}, {"mean", to_json(row.mean)}, {"std", to_json(row.stddev)},
                        {"per_seed", per_seed}});
  }
  return Json{{"preset", r.name}, {"rows", rows}};
}

std::string config_reference() {
  std::ostringstream os;
  os << "Dataset spec (--spec) keys and defaults:\n" << to_json(DatasetSpec{}).dump(2) << "\n\n";
  os << "Training config (--config) keys and defaults:\n" << to_json(TrainConfig{}).dump(2) << "\n";
  os << "  mode: source_only | dg_rna | uda_full | custom (custom reads custom_mask:\n"
     << "        " << to_json(LossMask{}).dump() << ")\n";
  os << "  mec_target: per_head | action\n";
  os << "  streams[i] keys: " << stream_arch_to_json(StreamConfig{}).dump() << "\n";
  return os.str();
}

}  // namespace normalign
