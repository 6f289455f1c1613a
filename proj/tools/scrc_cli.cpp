// scrc_cli: train, evaluate and query SCRC models from the command line.
// Machine output is JSON on stdout; diagnostics go to stderr.

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "scrc/scrc.hpp"

namespace {

using scrc::json;
using Real = double;

// ---------------------------------------------------------------------------
// Settings: built-in defaults < config file < command-line flags.

struct Settings {
  std::size_t embed_dim = 1000;
  std::size_t hidden_dim = 1000;
  double init_radius = 0.08;
  double lr = 0.001;
  double momentum = 0.9;
  double clip_norm = 10.0;
  std::size_t steps = 1000;
  std::size_t batch_size = 16;
  std::size_t log_every = 100;
  std::uint64_t seed = 0;
  bool mask_spatial = false;
  bool mask_context = false;
};

struct Overrides {
  std::optional<std::size_t> embed_dim, hidden_dim, steps, batch_size, log_every;
  std::optional<double> init_radius, lr, momentum, clip_norm;
  std::optional<std::uint64_t> seed;
};

void apply_config_file(Settings& s, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw scrc::InputError("cannot open config '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw scrc::InputError("config '" + path + "': " + e.what());
  }
  if (!j.is_object()) throw scrc::InputError("config '" + path + "' is not a JSON object");
  auto count = [&](const std::string& k, const json& v) {
    if (!v.is_number_unsigned()) throw scrc::ConfigError("config key '" + k + "' must be a count");
    return v.get<std::size_t>();
  };
  auto number = [&](const std::string& k, const json& v) {
    if (!v.is_number()) throw scrc::ConfigError("config key '" + k + "' must be a number");
    return v.get<double>();
  };
  auto flag = [&](const std::string& k, const json& v) {
    if (!v.is_boolean()) throw scrc::ConfigError("config key '" + k + "' must be boolean");
    return v.get<bool>();
  };
  for (const auto& [k, v] : j.items()) {
    if (k == "embed_dim") s.embed_dim = count(k, v);
    else if (k == "hidden_dim") s.hidden_dim = count(k, v);
    else if (k == "init_radius") s.init_radius = number(k, v);
    else if (k == "lr") s.lr = number(k, v);
    else if (k == "momentum") s.momentum = number(k, v);
    else if (k == "clip_norm") s.clip_norm = number(k, v);
    else if (k == "steps") s.steps = count(k, v);
    else if (k == "batch_size") s.batch_size = count(k, v);
    else if (k == "log_every") s.log_every = count(k, v);
    else if (k == "seed") s.seed = count(k, v);
    else if (k == "mask_spatial") s.mask_spatial = flag(k, v);
    else if (k == "mask_context") s.mask_context = flag(k, v);
    else throw scrc::ConfigError("unknown config key '" + k + "' in '" + path + "'");
  }
}

template <typename V>
void take(V& dst, const std::optional<V>& src) {
  if (src) dst = *src;
}

Settings resolve(const Settings& defaults, const std::string& config_path, const Overrides& o) {
  Settings s = defaults;
  if (!config_path.empty()) apply_config_file(s, config_path);
  take(s.embed_dim, o.embed_dim);
  take(s.hidden_dim, o.hidden_dim);
  take(s.steps, o.steps);
  take(s.batch_size, o.batch_size);
  take(s.log_every, o.log_every);
  take(s.init_radius, o.init_radius);
  take(s.lr, o.lr);
  take(s.momentum, o.momentum);
  take(s.clip_norm, o.clip_norm);
  take(s.seed, o.seed);
  if (!(s.init_radius >= 0.0)) throw scrc::ConfigError("init_radius must be >= 0");
  return s;
}

scrc::TrainConfig train_config(const Settings& s, scrc::Phase phase) {
  scrc::TrainConfig tc = scrc::TrainConfig::defaults(phase);
  tc.lr = s.lr;
  tc.momentum = s.momentum;
  tc.clip_norm = s.clip_norm;
  tc.steps = s.steps;
  tc.batch_size = s.batch_size;
  tc.log_every = s.log_every;
  tc.seed = s.seed;
  tc.validate();
  return tc;
}

void add_training_flags(CLI::App* cmd, std::string& config, Overrides& o) {
  cmd->add_option("--config", config, "JSON settings file (unknown keys are rejected)");
  cmd->add_option("--seed", o.seed, "Seed for initialization and batch order");
  cmd->add_option("--lr", o.lr, "Learning rate");
  cmd->add_option("--momentum", o.momentum, "SGD momentum");
  cmd->add_option("--clip-norm", o.clip_norm, "Global gradient-norm clip");
  cmd->add_option("--steps", o.steps, "Number of SGD steps");
  cmd->add_option("--batch-size", o.batch_size, "Minibatch size");
  cmd->add_option("--log-every", o.log_every, "Steps per reported loss interval");
  cmd->add_option("--init-radius", o.init_radius, "Uniform init radius");
}

// ---------------------------------------------------------------------------
// Helpers

void print(const json& j) { std::cout << j.dump(2) << '\n'; }

scrc::BoundingBox parse_box_flag(const std::string& text) {
  std::vector<double> v;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw scrc::InputError("--box '" + text + "' must be X1,Y1,X2,Y2");
    }
  }
  if (v.size() != 4) throw scrc::InputError("--box '" + text + "' must be X1,Y1,X2,Y2");
  return {v[0], v[1], v[2], v[3]};
}

scrc::ImageSize parse_size_flag(const std::string& text) {
  const auto x = text.find('x');
  try {
    if (x == std::string::npos) throw std::invalid_argument(text);
    std::size_t a = 0, b = 0;
    const auto w = std::stod(text.substr(0, x), &a);
    const auto h = std::stod(text.substr(x + 1), &b);
    if (a != x || b != text.size() - x - 1) throw std::invalid_argument(text);
    return {w, h};
  } catch (const std::exception&) {
    throw scrc::InputError("--image-size '" + text + "' must be WIDTHxHEIGHT");
  }
}

void check_feat_dim(const scrc::ScrcConfig& cfg, const scrc::FeatureStore& region,
                    const scrc::FeatureStore& context) {
  if (context.dim() != cfg.feat_dim)
    throw scrc::ConfigError("context feature dim " + std::to_string(context.dim()) +
                            " != model feat_dim " + std::to_string(cfg.feat_dim));
  if (region.dim() != cfg.feat_dim)
    throw scrc::ConfigError("region feature dim " + std::to_string(region.dim()) +
                            " != model feat_dim " + std::to_string(cfg.feat_dim));
}

const scrc::ProposalSet& find_proposals(const std::vector<scrc::ProposalSet>& sets,
                                        const std::string& image_id) {
  for (const auto& p : sets)
    if (p.image_id == image_id) return p;
  throw scrc::InputError("image '" + image_id + "' not found in proposals");
}

// ---------------------------------------------------------------------------
// Subcommands

struct PretrainArgs {
  std::string captions, context_features, annotations, out, config;
  Overrides overrides;
  bool timing = false;
};

int run_pretrain(const PretrainArgs& a) {
  Settings defaults;
  defaults.lr = scrc::TrainConfig::defaults(scrc::Phase::kPretrain).lr;
  const auto s = resolve(defaults, a.config, a.overrides);
  const auto captions = scrc::load_captions(a.captions);
  const auto context = scrc::load_feature_store(a.context_features);

  std::vector<std::string> corpus;
  for (const auto& c : captions) corpus.insert(corpus.end(), c.captions.begin(), c.captions.end());
  if (!a.annotations.empty())
    for (const auto& r : scrc::load_annotations(a.annotations))
      corpus.insert(corpus.end(), r.descriptions.begin(), r.descriptions.end());
  const auto vocab = scrc::build_vocab(corpus);

  scrc::ScrcConfig cfg;
  cfg.vocab_size = vocab.size();
  cfg.embed_dim = s.embed_dim;
  cfg.hidden_dim = s.hidden_dim;
  cfg.feat_dim = context.dim();
  cfg.caption_mode = true;
  cfg.validate();

  scrc::Rng rng(s.seed);
  auto params = scrc::ScrcParams<Real>::initialized(cfg, rng, s.init_radius);
  const auto report = scrc::pretrain_captioning(params, cfg, captions, context, vocab,
                                                train_config(s, scrc::Phase::kPretrain));
  scrc::save_checkpoint(params, cfg, vocab, a.out);
  auto j = report.to_json(a.timing);
  j["checkpoint"] = a.out;
  j["vocab_size"] = vocab.size();
  print(j);
  return 0;
}

int run_transfer(const std::string& in, const std::string& out) {
  auto ck = scrc::load_checkpoint<Real>(in);
  if (!ck.config.caption_mode)
    throw scrc::ConfigError("'" + in + "' is not a caption-mode checkpoint");
  scrc::transfer_weights(ck.params, ck.config);
  ck.config.caption_mode = false;
  scrc::save_checkpoint(ck.params, ck.config, ck.vocab, out);
  print({{"checkpoint", out}, {"transferred", true}});
  return 0;
}

struct FinetuneArgs {
  std::string annotations, region_features, context_features, in, out, config;
  Overrides overrides;
  bool mask_spatial = false, mask_context = false, no_transfer_init = false, timing = false;
};

int run_finetune(const FinetuneArgs& a) {
  auto s = resolve(Settings{}, a.config, a.overrides);
  s.mask_spatial = s.mask_spatial || a.mask_spatial;
  s.mask_context = s.mask_context || a.mask_context;

  auto ck = scrc::load_checkpoint<Real>(a.in);
  scrc::ScrcConfig cfg = ck.config;
  cfg.caption_mode = false;
  cfg.mask_spatial = s.mask_spatial;
  cfg.mask_context = s.mask_context;
  cfg.validate();
  scrc::ScrcParams<Real> params;
  if (a.no_transfer_init) {
    scrc::Rng rng(s.seed);
    params = scrc::ScrcParams<Real>::initialized(cfg, rng, s.init_radius);
  } else {
    if (ck.config.caption_mode)
      throw scrc::ConfigError("'" + a.in +
                              "' is a caption-mode checkpoint; run 'transfer' first or pass "
                              "--no-transfer-init");
    params = std::move(ck.params);
  }

  const auto records = scrc::load_annotations(a.annotations);
  const auto region = scrc::load_feature_store(a.region_features);
  const auto context = scrc::load_feature_store(a.context_features);
  check_feat_dim(cfg, region, context);
  const auto tuples = scrc::build_training_tuples(records, region, context, ck.vocab);
  const auto report = scrc::finetune_retrieval(params, cfg, tuples, region, context,
                                               train_config(s, scrc::Phase::kFinetune));
  scrc::save_checkpoint(params, cfg, ck.vocab, a.out);
  auto j = report.to_json(a.timing);
  j["checkpoint"] = a.out;
  j["tuples"] = tuples.size();
  j["mask_spatial"] = cfg.mask_spatial;
  j["mask_context"] = cfg.mask_context;
  print(j);
  return 0;
}

struct RetrieveArgs {
  std::string model, query, image_id, proposals, region_features, context_features, image_size;
  std::size_t top_k = 10;
};

int run_retrieve(const RetrieveArgs& a) {
  if (a.top_k < 1) throw scrc::InputError("--top-k must be >= 1");
  const auto ck = scrc::load_checkpoint<Real>(a.model);
  const auto region = scrc::load_feature_store(a.region_features);
  const auto context = scrc::load_feature_store(a.context_features);
  check_feat_dim(ck.config, region, context);
  const auto sets = scrc::load_proposals(a.proposals);
  const auto& props = find_proposals(sets, a.image_id);
  scrc::ImageSize size{};
  if (!a.image_size.empty()) size = parse_size_flag(a.image_size);
  else if (props.size) size = *props.size;
  else throw scrc::InputError("proposals for '" + a.image_id + "' carry no image size; pass --image-size");

  const scrc::ScoringContext<Real> ctx{ck.params, ck.config, ck.vocab, region, context};
  const auto result =
      scrc::rank_boxes(ctx, a.query, a.image_id, size, props.boxes, props.region_keys,
                       props.boxes.front(), std::string{});
  json ranked = json::array();
  for (std::size_t i = 0; i < result.ranked.size() && i < a.top_k; ++i) {
    const auto& c = result.ranked[i];
    ranked.push_back({{"box", {c.box.x_min, c.box.y_min, c.box.x_max, c.box.y_max}},
                      {"region_key", c.region_key},
                      {"log_prob", c.score}});
  }
  print({{"query", a.query}, {"image_id", a.image_id}, {"ranked", ranked}});
  return 0;
}

struct EvalArgs {
  std::string model, scenario, annotations, proposals, region_features, context_features,
      per_query_csv;
};

int run_eval(const EvalArgs& a) {
  const auto ck = scrc::load_checkpoint<Real>(a.model);
  const auto records = scrc::load_annotations(a.annotations);
  const auto region = scrc::load_feature_store(a.region_features);
  const auto context = scrc::load_feature_store(a.context_features);
  check_feat_dim(ck.config, region, context);
  const scrc::ScoringContext<Real> ctx{ck.params, ck.config, ck.vocab, region, context};

  std::vector<scrc::RankedResult> results;
  scrc::MetricsReport report;
  scrc::Scenario scenario;
  if (a.scenario == "gt") {
    scenario = scrc::Scenario::kGtBoxes;
    results = scrc::gt_scenario_results(ctx, records);
    report = scrc::eval_gt_scenario(results);
  } else {
    if (a.proposals.empty()) throw scrc::InputError("--scenario proposals requires --proposals");
    scenario = scrc::Scenario::kProposals;
    results = scrc::proposal_scenario_results(ctx, records, scrc::load_proposals(a.proposals));
    report = scrc::eval_proposal_scenario(results);
  }
  if (!a.per_query_csv.empty())
    scrc::write_text_file(a.per_query_csv, scrc::per_query_csv(results, scenario));
  print(report.to_json());
  return 0;
}

struct GenerateArgs {
  std::string model, region_key, image_id, box, region_features, context_features, image_size;
  std::size_t beam = 3;
  std::size_t max_len = 20;
};

int run_generate(const GenerateArgs& a) {
  const auto ck = scrc::load_checkpoint<Real>(a.model);
  const auto region = scrc::load_feature_store(a.region_features);
  const auto context = scrc::load_feature_store(a.context_features);
  check_feat_dim(ck.config, region, context);
  const auto box = parse_box_flag(a.box);
  const auto size = parse_size_flag(a.image_size);
  const auto visual =
      scrc::visual_input(region, context, a.region_key, a.image_id, scrc::encode_spatial(box, size));
  const auto gen = scrc::generate_description(ck.params, ck.config, visual, a.beam, a.max_len);
  print({{"text", scrc::join(scrc::decode(ck.vocab, gen.tokens))},
         {"tokens", gen.tokens},
         {"log_prob", gen.log_prob}});
  return 0;
}

int run_gradcheck(std::uint64_t seed) {
  const auto res = scrc::run_gradcheck(seed);
  auto j = res.to_json();
  j["seed"] = seed;
  print(j);
  constexpr double kLimit = 1e-4;
  if (res.max_rel_error > kLimit) {
    std::cerr << "error: max relative error " << res.max_rel_error << " exceeds " << kLimit
              << '\n';
    return 1;
  }
  return 0;
}

int run_synth(const std::string& out_dir, std::uint64_t seed, std::size_t images) {
  scrc::SynthOptions opt;
  opt.seed = seed;
  opt.images = images;
  const auto ds = scrc::make_synth_dataset(opt);
  const auto paths = scrc::write_synth_dataset(ds, out_dir);
  print({{"images", images},
         {"regions", ds.annotations.size()},
         {"region_features", paths.region_features},
         {"context_features", paths.context_features},
         {"annotations", paths.annotations},
         {"captions", paths.captions},
         {"proposals", paths.proposals},
         {"pretrain_config", paths.pretrain_config},
         {"finetune_config", paths.finetune_config}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SCRC natural-language object retrieval"};
  app.require_subcommand(1);

  PretrainArgs pre;
  auto* c_pre = app.add_subcommand("pretrain", "Caption-mode pretraining");
  c_pre->add_option("--captions", pre.captions, "Captions JSON-lines file")->required();
  c_pre->add_option("--context-features", pre.context_features, "Context feature store")->required();
  c_pre->add_option("--annotations", pre.annotations, "Annotations whose descriptions join the vocabulary");
  c_pre->add_option("--out", pre.out, "Output checkpoint")->required();
  c_pre->add_option("--embed-dim", pre.overrides.embed_dim, "Word embedding size");
  c_pre->add_option("--hidden-dim", pre.overrides.hidden_dim, "LSTM hidden size");
  c_pre->add_flag("--timing", pre.timing, "Include wall-clock time in the report");
  add_training_flags(c_pre, pre.config, pre.overrides);

  std::string tr_in, tr_out;
  auto* c_tr = app.add_subcommand("transfer", "Initialize the local branch from the global one");
  c_tr->add_option("--in", tr_in, "Caption-mode checkpoint")->required();
  c_tr->add_option("--out", tr_out, "Output checkpoint")->required();

  FinetuneArgs ft;
  auto* c_ft = app.add_subcommand("finetune", "Retrieval fine-tuning");
  c_ft->add_option("--annotations", ft.annotations, "Annotations JSON-lines file")->required();
  c_ft->add_option("--region-features", ft.region_features, "Region feature store")->required();
  c_ft->add_option("--context-features", ft.context_features, "Context feature store")->required();
  c_ft->add_option("--in", ft.in, "Transferred checkpoint")->required();
  c_ft->add_option("--out", ft.out, "Output checkpoint")->required();
  c_ft->add_flag("--mask-spatial", ft.mask_spatial, "Zero the spatial inputs");
  c_ft->add_flag("--mask-context", ft.mask_context, "Drop the global branch");
  c_ft->add_flag("--no-transfer-init", ft.no_transfer_init,
                 "Random init (uses only config and vocabulary of --in)");
  c_ft->add_flag("--timing", ft.timing, "Include wall-clock time in the report");
  add_training_flags(c_ft, ft.config, ft.overrides);

  RetrieveArgs rt;
  auto* c_rt = app.add_subcommand("retrieve", "Rank the proposals of one image for a query");
  c_rt->add_option("--model", rt.model, "Checkpoint")->required();
  c_rt->add_option("--query", rt.query, "Query text")->required();
  c_rt->add_option("--image-id", rt.image_id, "Image id")->required();
  c_rt->add_option("--proposals", rt.proposals, "Proposals JSON-lines file")->required();
  c_rt->add_option("--region-features", rt.region_features, "Region feature store")->required();
  c_rt->add_option("--context-features", rt.context_features, "Context feature store")->required();
  c_rt->add_option("--top-k", rt.top_k, "Number of results")->capture_default_str();
  c_rt->add_option("--image-size", rt.image_size, "WIDTHxHEIGHT when proposals omit it");

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  c_ev->add_option("--model", ev.model, "Checkpoint")->required();
  c_ev->add_option("--scenario", ev.scenario, "gt or proposals")
      ->required()
      ->check(CLI::IsMember({"gt", "proposals"}));
  c_ev->add_option("--annotations", ev.annotations, "Annotations JSON-lines file")->required();
  c_ev->add_option("--proposals", ev.proposals, "Proposals JSON-lines file");
  c_ev->add_option("--region-features", ev.region_features, "Region feature store")->required();
  c_ev->add_option("--context-features", ev.context_features, "Context feature store")->required();
  c_ev->add_option("--per-query-csv", ev.per_query_csv, "Write per-query results as CSV");

  GenerateArgs gen;
  auto* c_gen = app.add_subcommand("generate", "Describe a region with beam search");
  c_gen->add_option("--model", gen.model, "Checkpoint")->required();
  c_gen->add_option("--region-key", gen.region_key, "Region feature key")->required();
  c_gen->add_option("--image-id", gen.image_id, "Image id (context feature key)")->required();
  c_gen->add_option("--box", gen.box, "X1,Y1,X2,Y2")->required();
  c_gen->add_option("--image-size", gen.image_size, "WIDTHxHEIGHT")->required();
  c_gen->add_option("--region-features", gen.region_features, "Region feature store")->required();
  c_gen->add_option("--context-features", gen.context_features, "Context feature store")->required();
  c_gen->add_option("--beam", gen.beam, "Beam width")->capture_default_str();
  c_gen->add_option("--max-len", gen.max_len, "Maximum content tokens")->capture_default_str();

  std::uint64_t gc_seed = 0;
  auto* c_gc = app.add_subcommand("gradcheck", "Verify analytic gradients on a tiny model");
  c_gc->add_option("--seed", gc_seed, "Seed")->capture_default_str();

  std::string synth_dir;
  std::uint64_t synth_seed = 0;
  std::size_t synth_images = scrc::SynthOptions{}.images;
  auto* c_syn = app.add_subcommand("synth", "Write the toy retrieval dataset");
  c_syn->add_option("--out-dir", synth_dir, "Output directory")->required();
  c_syn->add_option("--seed", synth_seed, "Seed")->capture_default_str();
  c_syn->add_option("--images", synth_images, "Number of images")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*c_pre) return run_pretrain(pre);
    if (*c_tr) return run_transfer(tr_in, tr_out);
    if (*c_ft) return run_finetune(ft);
    if (*c_rt) return run_retrieve(rt);
    if (*c_ev) return run_eval(ev);
    if (*c_gen) return run_generate(gen);
    if (*c_gc) return run_gradcheck(gc_seed);
    if (*c_syn) return run_synth(synth_dir, synth_seed, synth_images);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
