#include "poisonlab/selection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "poisonlab/binary_io.hpp"
#include "poisonlab/errors.hpp"
#include "poisonlab/rng.hpp"

namespace poisonlab {

std::vector<SampleId> SamplePool::ids() const {
  std::vector<SampleId> out;
  out.reserve(members.size());
  for (const auto& m : members) out.push_back(m.id);
  return out;
}

std::vector<SampleId> eligible_indices(const Dataset& dataset, LabelMode mode, ClassIndex target) {
  if (dataset.empty()) throw ValidationError("eligible_indices: dataset is empty");
  std::vector<SampleId> ids;
  for (const auto& s : dataset.samples) {
    const bool ok = mode == LabelMode::dirty ? s.label != target : s.label == target;
    if (ok) ids.push_back(s.id);
  }
  if (ids.empty()) {
    throw ValidationError("no samples are eligible for " + to_string(mode) + "-label poisoning with target " +
                          std::to_string(target));
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

namespace {

std::unordered_map<SampleId, ClassIndex> label_map(const Dataset& dataset) {
  std::unordered_map<SampleId, ClassIndex> m;
  for (const auto& s : dataset.samples) m.emplace(s.id, s.label);
  return m;
}

void sort_members(std::vector<PoolMember>& members) {
  std::sort(members.begin(), members.end(), [](const PoolMember& a, const PoolMember& b) { return a.id < b.id; });
}

}  // namespace

SamplePool select_random(const Dataset& dataset, double r, LabelMode mode, ClassIndex target, std::uint64_t seed,
                         std::optional<std::size_t> pool_size) {
  auto eligible = eligible_indices(dataset, mode, target);
  const std::size_t n = pool_size ? *pool_size : pool_size_for(r, dataset.size());
  if (n == 0) throw ValidationError("pool size must be at least 1");
  if (n > eligible.size()) {
    throw ValidationError("pool of " + std::to_string(n) + " exceeds the " + std::to_string(eligible.size()) +
                          " eligible samples");
  }
  Rng rng(seed);
  rng.shuffle(std::span<SampleId>(eligible));
  const auto labels = label_map(dataset);
  SamplePool pool;
  pool.header.method = "random";
  pool.header.mixing_ratio = r;
  pool.header.seed = seed;
  pool.header.label_mode = mode;
  pool.header.target = target;
  for (std::size_t i = 0; i < n; ++i) pool.members.push_back(PoolMember{eligible[i], labels.at(eligible[i]), -1, 0});
  sort_members(pool.members);
  return pool;
}

int forgetting_score(std::span<const std::uint8_t> row) {
  if (row.empty()) throw ValidationError("forgetting_score: empty row");
  int events = 0;
  for (std::size_t e = 1; e < row.size(); ++e) {
    if (row[e - 1] != 0 && row[e] == 0) ++events;
  }
  return events;
}

CorrectnessLedger::CorrectnessLedger(std::vector<SampleId> ids) : ids_(std::move(ids)), rows_(ids_.size()) {}

void CorrectnessLedger::record_epoch(std::span<const std::uint8_t> bits) {
  if (bits.size() != ids_.size()) {
    throw ValidationError("ledger: epoch row has " + std::to_string(bits.size()) + " bits for " +
                          std::to_string(ids_.size()) + " samples");
  }
  for (std::size_t i = 0; i < bits.size(); ++i) rows_[i].push_back(bits[i] ? 1 : 0);
  ++epochs_;
}

std::vector<std::uint8_t> CorrectnessLedger::row(std::size_t i) const { return rows_.at(i); }

std::vector<int> CorrectnessLedger::scores() const {
  std::vector<int> out;
  out.reserve(rows_.size());
  for (const auto& r : rows_) out.push_back(forgetting_score(r));
  return out;
}

void FusConfig::validate() const {
  if (iterations < 1) throw ValidationError("fus: iterations must be >= 1");
  if (!(filtration_ratio > 0.0 && filtration_ratio < 1.0)) {
    throw ValidationError("fus: filtration_ratio must lie in (0,1)");
  }
  if (!pool_size && !(mixing_ratio > 0.0 && mixing_ratio < 1.0)) {
    throw ValidationError("fus: mixing_ratio must lie in (0,1)");
  }
}

std::size_t FusConfig::filtration_count(std::size_t pool) const {
  const auto k = static_cast<std::size_t>(std::floor(filtration_ratio * static_cast<double>(pool)));
  if (k < 1) {
    throw ValidationError("fus: filtration_ratio " + format_exact(filtration_ratio) + " removes nothing from a pool of " +
                          std::to_string(pool));
  }
  return k;
}

void to_json(nlohmann::json& j, const FusConfig& c) {
  j = {{"iterations", c.iterations},
       {"filtration_ratio", c.filtration_ratio},
       {"mixing_ratio", c.mixing_ratio},
       {"label_mode", to_string(c.label_mode)},
       {"retention", c.retention == Retention::best ? "best" : "last"},
       {"seed", c.seed},
       {"evaluate_final_pool", c.evaluate_final_pool}};
  if (c.pool_size) j["pool_size"] = *c.pool_size;
}

void from_json(const nlohmann::json& j, FusConfig& c) {
  FusConfig d;
  c.iterations = j.value("iterations", d.iterations);
  c.filtration_ratio = j.value("filtration_ratio", d.filtration_ratio);
  c.mixing_ratio = j.value("mixing_ratio", d.mixing_ratio);
  c.label_mode = parse_label_mode(j.value("label_mode", std::string("dirty")));
  const std::string retention = j.value("retention", std::string("best"));
  if (retention != "best" && retention != "last") throw ValidationError("fus: retention must be best or last");
  c.retention = retention == "best" ? Retention::best : Retention::last;
  c.seed = j.value("seed", d.seed);
  c.evaluate_final_pool = j.value("evaluate_final_pool", d.evaluate_final_pool);
  if (j.contains("pool_size") && !j.at("pool_size").is_null()) c.pool_size = j.at("pool_size").get<std::size_t>();
}

FusResult fus_select(const Dataset& dataset, const Trigger& trigger, const FusConfig& config, ClassIndex target,
                     const FusTrainFn& train_fn, const Dataset& validation) {
  config.validate();
  if (!train_fn) throw ValidationError("fus: no training callback");
  if (validation.empty()) throw ValidationError("fus: validation set is empty");
  if (validation.count_label(target) == validation.size()) {
    throw ValidationError("fus: validation set has no non-target samples to measure ASR on");
  }
  trigger.validate(dataset.resolution);
  const std::size_t n = config.pool_size ? *config.pool_size : pool_size_for(config.mixing_ratio, dataset.size());
  const std::size_t k = config.filtration_count(n);
  const auto eligible = eligible_indices(dataset, config.label_mode, target);
  if (n > eligible.size()) {
    throw ValidationError("fus: pool of " + std::to_string(n) + " exceeds the " + std::to_string(eligible.size()) +
                          " eligible samples");
  }
  if (eligible.size() - n < k) {
    throw ValidationError("fus: only " + std::to_string(eligible.size() - n) + " eligible ids outside the pool, " +
                          std::to_string(k) + " needed per refill");
  }

  SamplePool initial = select_random(dataset, config.mixing_ratio, config.label_mode, target,
                                     derive_seed(config.seed, 0), n);
  std::vector<PoolMember> members = initial.members;
  const auto labels = label_map(dataset);
  Rng rng(derive_seed(config.seed, 1));

  std::vector<FusIteration> trace;
  std::vector<std::vector<PoolMember>> snapshots;

  auto train_and_score = [&](int iteration) {
    PoisonPlan plan;
    for (const auto& m : members) plan.pool.push_back(m.id);
    plan.trigger = trigger;
    plan.target = target;
    plan.label_mode = config.label_mode;
    plan.mixing_ratio = static_cast<double>(n) / static_cast<double>(dataset.size());
    const auto poisoned = build_poisoned_set(dataset, plan);
    const auto mixed = mix_training_set(dataset, poisoned);
    InfectedTraining outcome;
    try {
      outcome = train_fn(mixed, poisoned, iteration);
    } catch (const Error& e) {
      throw TrainingError("fus iteration " + std::to_string(iteration) + ": " + e.what());
    }
    if (!outcome.model) throw TrainingError("fus iteration " + std::to_string(iteration) + ": no model returned");
    if (outcome.ledger.ids() != plan.pool || outcome.ledger.epochs() < 1) {
      throw TrainingError("fus iteration " + std::to_string(iteration) + ": correctness ledger does not cover the pool");
    }
    FusIteration it;
    it.iteration = iteration;
    it.pool = plan.pool;
    it.scores = outcome.ledger.scores();
    it.validation_asr = compute_asr(*outcome.model, validation, trigger, target).asr;
    for (std::size_t i = 0; i < members.size(); ++i) members[i].score = it.scores[i];
    trace.push_back(std::move(it));
    snapshots.push_back(members);
  };

  for (int iteration = 1; iteration <= config.iterations; ++iteration) {
    train_and_score(iteration);
    auto& it = trace.back();

    std::vector<std::size_t> order(members.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(order));
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return members[a].score < members[b].score; });
    std::vector<char> drop(members.size(), 0);
    for (std::size_t i = 0; i < k; ++i) drop[order[i]] = 1;

    std::unordered_set<SampleId> current;
    for (const auto& m : members) current.insert(m.id);
    std::vector<SampleId> candidates;
    for (SampleId id : eligible) {
      if (!current.count(id)) candidates.push_back(id);
    }
    rng.shuffle(std::span<SampleId>(candidates));

    std::vector<PoolMember> next;
    for (std::size_t i = 0; i < members.size(); ++i) {
      if (drop[i]) it.removed.push_back(members[i].id);
      else next.push_back(members[i]);
    }
    for (std::size_t i = 0; i < k; ++i) {
      next.push_back(PoolMember{candidates[i], labels.at(candidates[i]), -1, iteration});
      it.added.push_back(candidates[i]);
    }
    std::sort(it.removed.begin(), it.removed.end());
    std::sort(it.added.begin(), it.added.end());
    sort_members(next);
    members = std::move(next);
  }

  const bool final_eval = config.retention == Retention::best && config.evaluate_final_pool;
  if (final_eval) train_and_score(config.iterations + 1);

  FusResult result;
  result.pool.header.method = "fus";
  result.pool.header.mixing_ratio = config.mixing_ratio;
  result.pool.header.filtration_ratio = config.filtration_ratio;
  result.pool.header.iterations = config.iterations;
  result.pool.header.seed = config.seed;
  result.pool.header.retention = config.retention == Retention::best ? "best" : "last";
  result.pool.header.label_mode = config.label_mode;
  result.pool.header.target = target;
  if (config.retention == Retention::best) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < trace.size(); ++i) {
      if (*trace[i].validation_asr->value() > *trace[best].validation_asr->value()) best = i;
    }
    result.pool.members = snapshots[best];
    result.pool.header.chosen_iteration = trace[best].iteration;
  } else {
    result.pool.members = members;
    result.pool.header.chosen_iteration = config.iterations + 1;
  }
  result.trace = std::move(trace);
  return result;
}

FusTrainFn make_cnn_train_fn(CompactCnnSpec spec, TrainConfig config) {
  return [spec = std::move(spec), config = std::move(config)](const MixedTrainingSet& mixed,
                                                              std::span<const LabeledSample> poisoned,
                                                              int iteration) {
    if (poisoned.empty()) throw ValidationError("fus training: no poisoned samples");
    TrainConfig cfg = config;
    cfg.seed = derive_seed(config.seed, static_cast<std::uint64_t>(iteration));
    std::vector<SampleId> ids;
    for (const auto& p : poisoned) ids.push_back(p.id);
    CorrectnessLedger ledger(ids);
    const ClassIndex target = poisoned.front().label;
    auto trained = train_classifier(spec, mixed.data, cfg, [&](int, const CompactCnn& model) {
      ledger.record_epoch(record_target_correctness(model, poisoned, target));
    });
    return InfectedTraining{std::make_shared<CompactCnn>(std::move(trained.model)), std::move(ledger)};
  };
}

namespace {

std::string header_line(const PoolHeader& h, std::size_t size) {
  std::ostringstream s;
  s << "# poisonlab-pool method=" << h.method << " r=" << format_exact(h.mixing_ratio)
    << " alpha=" << format_exact(h.filtration_ratio) << " N=" << h.iterations << " seed=" << h.seed
    << " retention=" << h.retention << " chosen_iteration=" << h.chosen_iteration
    << " label_mode=" << to_string(h.label_mode) << " target=" << h.target << " size=" << size;
  return s.str();
}

}  // namespace

void write_pool(const std::filesystem::path& path, const SamplePool& pool) {
  auto out = open_for_write(path);
  out << header_line(pool.header, pool.size()) << '\n';
  for (const auto& m : pool.members) {
    out << m.id << ' ' << m.original_label << ' ' << m.score << ' ' << m.iteration_selected << '\n';
  }
  if (!out) throw IoError(path.string() + ": write failed");
}

SamplePool read_pool(const std::filesystem::path& path) {
  auto in = open_for_read(path);
  const std::string src = path.string();
  std::string line;
  if (!std::getline(in, line) || !line.starts_with("# poisonlab-pool")) {
    throw DecodeError(src + ": missing pool header line");
  }
  SamplePool pool;
  std::istringstream hs(line.substr(std::string("# poisonlab-pool").size()));
  std::string token;
  std::int64_t size = -1;
  while (hs >> token) {
    const auto eq = token.find('=');
    if (eq == std::string::npos) throw DecodeError(src + ": bad header token '" + token + "'");
    const std::string key = token.substr(0, eq), value = token.substr(eq + 1);
    auto& h = pool.header;
    if (key == "method") h.method = value;
    else if (key == "r") h.mixing_ratio = parse_double(value, src + " r");
    else if (key == "alpha") h.filtration_ratio = parse_double(value, src + " alpha");
    else if (key == "N") h.iterations = static_cast<int>(parse_int(value, src + " N"));
    else if (key == "seed") h.seed = std::stoull(value);
    else if (key == "retention") h.retention = value;
    else if (key == "chosen_iteration") h.chosen_iteration = static_cast<int>(parse_int(value, src + " chosen_iteration"));
    else if (key == "label_mode") h.label_mode = parse_label_mode(value);
    else if (key == "target") h.target = static_cast<ClassIndex>(parse_int(value, src + " target"));
    else if (key == "size") size = parse_int(value, src + " size");
    else throw DecodeError(src + ": unknown header field '" + key + "'");
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    PoolMember m;
    if (!(ls >> m.id >> m.original_label >> m.score >> m.iteration_selected)) {
      throw DecodeError(src + ": bad pool record '" + line + "'");
    }
    pool.members.push_back(m);
  }
  if (size >= 0 && static_cast<std::size_t>(size) != pool.members.size()) {
    throw DecodeError(src + ": header says " + std::to_string(size) + " members, found " +
                      std::to_string(pool.members.size()));
  }
  std::unordered_set<SampleId> seen;
  for (const auto& m : pool.members) {
    if (!seen.insert(m.id).second) throw DecodeError(src + ": duplicate id " + std::to_string(m.id));
  }
  return pool;
}

nlohmann::json fus_trace_to_json(const std::vector<FusIteration>& trace) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& it : trace) {
    nlohmann::json j = {{"iteration", it.iteration}, {"pool", it.pool},       {"scores", it.scores},
                        {"removed", it.removed},     {"added", it.added}};
    j["validation_asr"] = it.validation_asr ? nlohmann::json(*it.validation_asr) : nlohmann::json(nullptr);
    out.push_back(std::move(j));
  }
  return out;
}

}  // namespace poisonlab
