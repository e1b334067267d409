#include "streamtx/workloads.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace streamtx {
namespace workloads {

void WorkloadKnobs::validate() const {
  if (theta < 0.0 || theta > 1.0) throw ConfigError("theta out of range [0,1]");
  if (abort_ratio < 0.0 || abort_ratio > 0.9) throw ConfigError("abort ratio out of range [0,0.9]");
  if (txn_len < 1 || txn_len > 10) throw ConfigError("txn length out of range [1,10]");
  if (udf_cost_us > 100) throw ConfigError("udf cost out of range [0,100]");
  if (multi_access < 1 || multi_access > 10) throw ConfigError("multi access out of range [1,10]");
  if (key_space < 1) throw ConfigError("key space must be positive");
  if (transfer_ratio < 0.0 || transfer_ratio > 1.0) throw ConfigError("transfer ratio out of range");
  if (nondet_fraction < 0.0 || nondet_fraction > 1.0) throw ConfigError("nondet fraction out of range");
}

std::uint64_t uniform_u64(std::mt19937_64& rng, std::uint64_t n) {
  if (n == 0) throw ConfigError("uniform_u64: empty range");
  // Modulo rejection keeps the draw unbiased and platform-stable.
  std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                        std::numeric_limits<std::uint64_t>::max() % n;
  for (;;) {
    std::uint64_t x = rng();
    if (x < limit) return x % n;
  }
}

double uniform_unit(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

ZipfSampler::ZipfSampler(double theta, std::uint64_t key_space) : theta_(theta) {
  if (key_space == 0) throw ConfigError("zipf: key space must be positive");
  cdf_.resize(key_space);
  double acc = 0.0;
  for (std::uint64_t k = 0; k < key_space; ++k) {
    acc += std::pow(static_cast<double>(k + 1), -theta);
    cdf_[k] = acc;
  }
  for (auto& c : cdf_) c /= acc;
}

Key ZipfSampler::sample(std::mt19937_64& rng) const {
  double u = uniform_unit(rng);
  auto it = std::lower_bound(cdf_.begin(), cdf_.end(), u);
  if (it == cdf_.end()) --it;
  return static_cast<Key>(it - cdf_.begin());
}

Key zipf_key(double theta, std::uint64_t key_space, std::mt19937_64& rng) {
  return ZipfSampler(theta, key_space).sample(rng);
}

namespace {

constexpr Value kHugeAmount = 1'000'000'000'000LL;

// Positions of injected aborts: exactly round(block * a) per block of 100
// events, placed by a seeded shuffle, so the realized fraction matches the
// knob tightly.
class AbortQuota {
 public:
  AbortQuota(std::mt19937_64& rng, std::function<double(std::uint64_t)> ratio_at)
      : rng_(rng), ratio_at_(std::move(ratio_at)) {}

  bool should_abort(std::uint64_t index) {
    constexpr std::uint64_t kBlock = 100;
    if (index % kBlock == 0) {
      block_.assign(kBlock, 0);
      auto quota = static_cast<std::uint64_t>(
          std::llround(ratio_at_(index) * static_cast<double>(kBlock)));
      for (std::uint64_t i = 0; i < quota; ++i) block_[i] = 1;
      for (std::uint64_t i = kBlock - 1; i > 0; --i)
        std::swap(block_[i], block_[uniform_u64(rng_, i + 1)]);
    }
    return block_[index % kBlock] != 0;
  }

 private:
  std::mt19937_64& rng_;
  std::function<double(std::uint64_t)> ratio_at_;
  std::vector<std::uint8_t> block_;
};

struct SlFns {
  FunctionRef add, sub, recv, guard, never;
};

SlFns register_sl_udfs(UdfRegistry& reg, std::uint32_t cost_us) {
  SlFns f;
  f.add = reg.register_value([](const UdfContext& c) { return c.reads[0] + c.args[0]; }, 1,
                             cost_us);
  f.sub = reg.register_value([](const UdfContext& c) { return c.reads[0] - c.args[0]; }, 1,
                             cost_us);
  f.recv = reg.register_value([](const UdfContext& c) { return c.reads[1] + c.args[0]; }, 2,
                              cost_us);
  f.guard = reg.register_condition([](const UdfContext& c) { return c.reads[0] >= c.args[0]; }, 1);
  f.never = reg.register_condition([](const UdfContext&) { return false; }, 0);
  return f;
}

enum SlKind : std::uint16_t { kDeposit = 0, kTransfer = 1 };
// Transfer arg layout: [src, dst, amount, fail_mode]; fail_mode 1 carries
// an amount no balance can cover, fail_mode 2 fails the receiver statement.

Operator make_sl_operator(std::shared_ptr<UdfRegistry> reg, SlFns f) {
  Operator op;
  op.pre_process = [](const Event& e) {
    EventBlotter eb;
    eb.params = e.args;
    return eb;
  };
  op.state_access = [f](TxnBuilder& b, EventBlotter& eb) {
    if (eb.params.size() == 2) {  // deposit
      b.request_write(static_cast<Key>(eb.params[0]), f.add, {eb.params[1]});
      return;
    }
    Key src = static_cast<Key>(eb.params[0]);
    Key dst = static_cast<Key>(eb.params[1]);
    Value amount = eb.params[2];
    bool late_fail = eb.params[3] == 2;
    b.request_write(src, f.sub, {amount}, f.guard);
    b.request_multikey_write(dst, {src, dst}, f.recv, {amount}, late_fail ? f.never : f.guard);
  };
  op.post_process = [](const Event&, const EventBlotter& eb) -> std::optional<OutputRecord> {
    if (eb.status == BlotterStatus::Filtered) return std::nullopt;
    OutputRecord out;
    out.values = eb.results;
    return out;
  };
  return op;
}

struct SlEventGen {
  const WorkloadKnobs& knobs;
  std::mt19937_64 rng;
  std::unique_ptr<ZipfSampler> sampler;
  double sampler_theta = -1.0;

  explicit SlEventGen(const WorkloadKnobs& k) : knobs(k), rng(k.seed) {}

  void ensure_sampler(double theta) {
    double quantized = std::round(theta * 50.0) / 50.0;
    if (!sampler || sampler_theta != quantized) {
      sampler = std::make_unique<ZipfSampler>(quantized, knobs.key_space);
      sampler_theta = quantized;
    }
  }

  Event make(std::uint64_t index, double theta, double transfer_ratio, bool inject_abort,
             int& abort_flip) {
    ensure_sampler(theta);
    Event e;
    e.ts = index + 1;
    e.event_id = e.ts;
    bool transfer = inject_abort || uniform_unit(rng) < transfer_ratio;
    if (!transfer) {
      e.kind = kDeposit;
      Key acc = sampler->sample(rng);
      Value amount = 1 + static_cast<Value>(uniform_u64(rng, 100));
      e.args = {static_cast<Value>(acc), amount};
      return e;
    }
    e.kind = kTransfer;
    Key src = sampler->sample(rng);
    Key dst = sampler->sample(rng);
    if (knobs.key_space > 1)
      while (dst == src) dst = sampler->sample(rng);
    Value amount = 1 + static_cast<Value>(uniform_u64(rng, 100));
    Value fail_mode = 0;
    if (inject_abort) {
      fail_mode = (abort_flip++ % 2 == 0) ? 1 : 2;
      if (fail_mode == 1) amount = kHugeAmount;
    }
    e.args = {static_cast<Value>(src), static_cast<Value>(dst), amount, fail_mode};
    return e;
  }
};

std::uint64_t event_count(const WorkloadKnobs& k) {
  return k.events > 0 ? k.events : k.punctuation_interval;
}

}  // namespace

Workload gen_sl(const WorkloadKnobs& knobs) {
  knobs.validate();
  Workload w;
  w.name = "sl";
  w.knobs = knobs;
  w.key_space = knobs.key_space;
  w.initial_value = knobs.initial_value;
  w.registry = std::make_shared<UdfRegistry>();
  SlFns f = register_sl_udfs(*w.registry, knobs.udf_cost_us);
  w.registry->seal();
  w.op = make_sl_operator(w.registry, f);

  SlEventGen gen(knobs);
  AbortQuota quota(gen.rng, [&](std::uint64_t) { return knobs.abort_ratio; });
  int flip = 0;
  std::uint64_t count = event_count(knobs);
  w.events.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i)
    w.events.push_back(gen.make(i, knobs.theta, knobs.transfer_ratio, quota.should_abort(i), flip));
  return w;
}

Workload gen_dynamic(const std::vector<PhaseSpec>& phases, const WorkloadKnobs& base) {
  base.validate();
  if (phases.empty()) throw ConfigError("dynamic workload needs at least one phase");

  auto check_range = [](const std::string& knob, double v) {
    WorkloadKnobs probe;
    if (knob == "theta") probe.theta = v;
    else if (knob == "abort") probe.abort_ratio = v;
    else if (knob == "transfer") probe.transfer_ratio = v;
    else if (knob == "cost") probe.udf_cost_us = static_cast<std::uint32_t>(v);
    else throw ConfigError("dynamic workload: unknown knob '" + knob + "'");
    probe.validate();
  };
  for (const PhaseSpec& p : phases) {
    if (p.length == 0) throw ConfigError("dynamic phase length must be positive");
    for (const auto& [knob, ramp] : p.trends) {
      check_range(knob, ramp.first);
      check_range(knob, ramp.second);
    }
  }

  Workload w;
  w.name = "dynamic";
  w.knobs = base;
  w.key_space = base.key_space;
  w.initial_value = base.initial_value;
  w.registry = std::make_shared<UdfRegistry>();
  SlFns f = register_sl_udfs(*w.registry, base.udf_cost_us);
  w.registry->seal();
  w.op = make_sl_operator(w.registry, f);

  SlEventGen gen(base);
  std::uint64_t index = 0;
  int flip = 0;
  // Knob values interpolate linearly inside each phase.
  for (const PhaseSpec& phase : phases) {
    auto at = [&](const std::string& knob, double fallback, std::uint64_t i) {
      auto it = phase.trends.find(knob);
      if (it == phase.trends.end()) return fallback;
      double t = phase.length <= 1
                     ? 0.0
                     : static_cast<double>(i) / static_cast<double>(phase.length - 1);
      return it->second.first + (it->second.second - it->second.first) * t;
    };
    AbortQuota quota(gen.rng,
                     [&](std::uint64_t i) { return at("abort", base.abort_ratio, i); });
    for (std::uint64_t i = 0; i < phase.length; ++i, ++index) {
      double theta = at("theta", base.theta, i);
      double transfer = at("transfer", base.transfer_ratio, i);
      w.events.push_back(gen.make(index, theta, transfer, quota.should_abort(i), flip));
    }
  }
  return w;
}

namespace {

enum GsKind : std::uint16_t { kGsWrite = 0, kGsWindowRead = 1, kGsNonDetWrite = 2 };

struct GsFns {
  FunctionRef mean, store, win_sum, selector, never;
};

GsFns register_gs_udfs(UdfRegistry& reg, std::uint32_t cost_us) {
  GsFns f;
  // Mean of the read values plus a bounded delta keeps states in range
  // across arbitrarily long runs.
  f.mean = reg.register_value(
      [](const UdfContext& c) {
        Value sum = 0;
        for (Value v : c.reads) sum += v;
        return sum / static_cast<Value>(c.reads.size()) + c.args[0];
      },
      1, cost_us);
  f.store = reg.register_value([](const UdfContext& c) { return c.args[0]; }, 1, cost_us);
  f.win_sum = reg.register_window(
      [](std::span<const Value> vals) {
        Value sum = 0;
        for (Value v : vals) sum += v;
        return sum;
      },
      cost_us);
  // Candidate list and pick index travel in the operation arguments:
  // [c0, c1, c2, c3, pick, delta, ...].
  f.selector = reg.register_selector([](const UdfContext& c) {
    std::uint64_t pick = static_cast<std::uint64_t>(c.args[4]) % 4;
    return std::vector<Key>{static_cast<Key>(c.args[pick])};
  });
  f.never = reg.register_condition([](const UdfContext&) { return false; }, 0);
  return f;
}

Operator make_gs_operator(GsFns f, std::uint64_t window_size, bool pessimistic) {
  Operator op;
  op.pre_process = [](const Event& e) {
    EventBlotter eb;
    eb.params = e.args;
    eb.params.push_back(e.kind);
    return eb;
  };
  op.state_access = [f, window_size, pessimistic](TxnBuilder& b, EventBlotter& eb) {
    std::uint16_t kind = static_cast<std::uint16_t>(eb.params.back());
    if (kind == kGsWrite) {
      // [target, r-1 read keys..., delta, fail]
      Key target = static_cast<Key>(eb.params[0]);
      std::size_t nargs = eb.params.size() - 1;
      Value fail = eb.params[nargs - 1];
      Value delta = eb.params[nargs - 2];
      std::vector<Key> reads{target};
      for (std::size_t i = 1; i + 2 < nargs; ++i) reads.push_back(static_cast<Key>(eb.params[i]));
      FunctionRef cond = fail != 0 ? f.never : FunctionRef{};
      if (reads.size() == 1)
        b.request_write(target, f.mean, {delta}, cond);
      else
        b.request_multikey_write(target, reads, f.mean, {delta}, cond);
    } else if (kind == kGsWindowRead) {
      std::vector<Key> keys;
      for (std::size_t i = 0; i + 1 < eb.params.size(); ++i)
        keys.push_back(static_cast<Key>(eb.params[i]));
      b.request_window_read(keys, window_size, f.win_sum);
    } else {  // non-deterministic write
      // [c0, c1, c2, c3, pick, delta, fail]
      std::vector<Value> args(eb.params.begin(), eb.params.end() - 1);
      Value fail = args.back();
      std::vector<Key> candidates;
      if (!pessimistic)
        for (int i = 0; i < 4; ++i) candidates.push_back(static_cast<Key>(args[i]));
      b.request_nondet_write(f.selector, f.mean, args, candidates,
                             fail != 0 ? f.never : FunctionRef{});
    }
  };
  op.post_process = [](const Event&, const EventBlotter& eb) -> std::optional<OutputRecord> {
    if (eb.status == BlotterStatus::Filtered) return std::nullopt;
    OutputRecord out;
    out.values = eb.results;
    return out;
  };
  return op;
}

}  // namespace

Workload gen_gs(const WorkloadKnobs& knobs, GsVariant variant) {
  knobs.validate();
  Workload w;
  w.name = variant == GsVariant::Plain ? "gs" : variant == GsVariant::Window ? "gs-window"
                                                                             : "gs-nondet";
  w.knobs = knobs;
  w.key_space = knobs.key_space;
  w.initial_value = knobs.initial_value;
  w.registry = std::make_shared<UdfRegistry>();
  GsFns f = register_gs_udfs(*w.registry, knobs.udf_cost_us);
  w.registry->seal();
  w.op = make_gs_operator(f, knobs.window_size, knobs.nondet_pessimistic);

  std::mt19937_64 rng(knobs.seed);
  ZipfSampler sampler(knobs.theta, knobs.key_space);
  double abort_ratio = variant == GsVariant::Window ? 0.0 : knobs.abort_ratio;
  AbortQuota quota(rng, [abort_ratio](std::uint64_t) { return abort_ratio; });

  std::uint64_t count = event_count(knobs);
  w.events.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    Event e;
    e.ts = i + 1;
    e.event_id = e.ts;
    bool inject = quota.should_abort(i);

    if (variant == GsVariant::Window && knobs.window_trigger_period > 0 &&
        (i + 1) % knobs.window_trigger_period == 0) {
      e.kind = kGsWindowRead;
      std::uint64_t m = std::min<std::uint64_t>(knobs.window_read_keys, knobs.key_space);
      std::vector<std::uint8_t> used(knobs.key_space, 0);
      for (std::uint64_t j = 0; j < m; ++j) {
        Key k = static_cast<Key>(uniform_u64(rng, knobs.key_space));
        while (used[k]) k = (k + 1) % knobs.key_space;
        used[k] = 1;
        e.args.push_back(static_cast<Value>(k));
      }
      e.args.push_back(0);  // trailing slot keeps arg layout uniform
      w.events.push_back(std::move(e));
      continue;
    }

    if (variant == GsVariant::NonDet && uniform_unit(rng) < knobs.nondet_fraction) {
      e.kind = kGsNonDetWrite;
      for (int c = 0; c < 4; ++c)
        e.args.push_back(static_cast<Value>(sampler.sample(rng)));
      e.args.push_back(static_cast<Value>(uniform_u64(rng, 4)));          // pick
      e.args.push_back(1 + static_cast<Value>(uniform_u64(rng, 100)));    // delta
      e.args.push_back(inject ? 1 : 0);
      w.events.push_back(std::move(e));
      continue;
    }

    e.kind = kGsWrite;
    Key target = sampler.sample(rng);
    e.args.push_back(static_cast<Value>(target));
    std::uint32_t reads = std::max<std::uint32_t>(knobs.multi_access, 1);
    for (std::uint32_t r = 1; r < reads; ++r) {
      Key k = sampler.sample(rng);
      if (knobs.key_space > 1)
        while (k == target) k = sampler.sample(rng);
      e.args.push_back(static_cast<Value>(k));
    }
    e.args.push_back(1 + static_cast<Value>(uniform_u64(rng, 100)));  // delta
    e.args.push_back(inject ? 1 : 0);
    w.events.push_back(std::move(e));
  }
  return w;
}

namespace {

struct TpFns {
  FunctionRef add, never;
};

}  // namespace

Workload gen_tp(const WorkloadKnobs& knobs) {
  knobs.validate();
  Workload w;
  w.name = "tp";
  w.knobs = knobs;
  w.key_space = std::max<std::uint64_t>(knobs.key_space, 2);
  w.initial_value = knobs.initial_value;
  w.registry = std::make_shared<UdfRegistry>();
  TpFns f;
  f.add = w.registry->register_value(
      [](const UdfContext& c) { return c.reads[0] + c.args[0]; }, 1, knobs.udf_cost_us);
  f.never = w.registry->register_condition([](const UdfContext&) { return false; }, 0);
  w.registry->seal();

  w.op.pre_process = [](const Event& e) {
    EventBlotter eb;
    eb.params = e.args;
    return eb;
  };
  w.op.state_access = [f](TxnBuilder& b, EventBlotter& eb) {
    // [k1, k2, v1, v2, fail]
    b.request_write(static_cast<Key>(eb.params[0]), f.add, {eb.params[2]});
    b.request_write(static_cast<Key>(eb.params[1]), f.add, {eb.params[3]},
                    eb.params[4] != 0 ? f.never : FunctionRef{});
  };
  w.op.post_process = [](const Event&, const EventBlotter& eb) -> std::optional<OutputRecord> {
    if (eb.status == BlotterStatus::Filtered) return std::nullopt;
    OutputRecord out;
    out.values = eb.results;
    return out;
  };

  // Group 1 works a skewed key range with frequent aborts; group 2 a
  // uniform range with none.
  std::uint64_t half = w.key_space / 2;
  std::mt19937_64 rng(knobs.seed);
  ZipfSampler skewed(std::max(0.8, knobs.theta), half);
  double group1_aborts = std::max(0.3, knobs.abort_ratio);
  AbortQuota quota(rng, [group1_aborts](std::uint64_t) { return group1_aborts; });

  std::uint64_t count = event_count(knobs);
  w.events.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    Event e;
    e.ts = i + 1;
    e.event_id = e.ts;
    e.kind = 0;
    e.group = (i % 2) + 1;
    Key k1, k2;
    bool inject = false;
    if (e.group == 1) {
      k1 = skewed.sample(rng);
      k2 = skewed.sample(rng);
      if (half > 1)
        while (k2 == k1) k2 = skewed.sample(rng);
      inject = quota.should_abort(i / 2);
    } else {
      k1 = half + uniform_u64(rng, w.key_space - half);
      k2 = half + uniform_u64(rng, w.key_space - half);
      if (w.key_space - half > 1)
        while (k2 == k1) k2 = half + uniform_u64(rng, w.key_space - half);
    }
    e.args = {static_cast<Value>(k1), static_cast<Value>(k2),
              1 + static_cast<Value>(uniform_u64(rng, 100)),
              1 + static_cast<Value>(uniform_u64(rng, 100)), inject ? 1 : 0};
    w.events.push_back(std::move(e));
  }
  return w;
}

void shuffle_arrival(std::vector<Event>& events, std::uint64_t window,
                     std::uint32_t punctuation_interval, std::mt19937_64& rng) {
  if (window == 0) return;
  // Shuffle blocks of `window` events inside each punctuation segment;
  // displacement stays below the window and never crosses a batch edge.
  for (std::size_t seg = 0; seg < events.size(); seg += punctuation_interval) {
    std::size_t seg_end = std::min(events.size(), seg + punctuation_interval);
    for (std::size_t blk = seg; blk < seg_end; blk += window) {
      std::size_t end = std::min(seg_end, blk + window);
      for (std::size_t i = end - 1; i > blk; --i)
        std::swap(events[i], events[blk + uniform_u64(rng, i - blk + 1)]);
    }
  }
}

std::string events_to_csv(const Workload& w) {
  std::ostringstream os;
  const WorkloadKnobs& k = w.knobs;
  os << "# workload=" << w.name << '\n';
  os << "# seed=" << k.seed << " theta=" << k.theta << " abort=" << k.abort_ratio
     << " len=" << k.txn_len << " cost=" << k.udf_cost_us << " multi=" << k.multi_access
     << " interval=" << k.punctuation_interval << " keys=" << k.key_space
     << " events=" << w.events.size() << '\n';
  os << "# columns=ts,type,group,args\n";
  for (const Event& e : w.events) {
    os << e.ts << ',' << e.kind << ',' << e.group;
    for (Value a : e.args) os << ',' << a;
    os << '\n';
  }
  return os.str();
}

std::vector<Event> events_from_csv(const std::string& text) {
  std::vector<Event> events;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    Event e;
    std::istringstream ls(line);
    std::string cell;
    int col = 0;
    while (std::getline(ls, cell, ',')) {
      long long v = std::stoll(cell);
      switch (col) {
        case 0: e.ts = static_cast<Timestamp>(v); break;
        case 1: e.kind = static_cast<std::uint16_t>(v); break;
        case 2: e.group = static_cast<GroupTag>(v); break;
        default: e.args.push_back(v);
      }
      ++col;
    }
    if (col < 3) throw ConfigError("event csv: malformed row '" + line + "'");
    e.event_id = e.ts;
    events.push_back(std::move(e));
  }
  return events;
}

Workload make_workload(const std::string& name, const WorkloadKnobs& knobs) {
  if (name == "sl") return gen_sl(knobs);
  if (name == "gs") return gen_gs(knobs, GsVariant::Plain);
  if (name == "gs-window") return gen_gs(knobs, GsVariant::Window);
  if (name == "gs-nondet") return gen_gs(knobs, GsVariant::NonDet);
  if (name == "tp") return gen_tp(knobs);
  throw ConfigError("unknown workload '" + name + "'");
}

std::vector<PhaseSpec> parse_dynamic_script(const std::string& text) {
  std::vector<PhaseSpec> phases;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string tok;
    PhaseSpec phase;
    bool any = false;
    while (ls >> tok) {
      auto eq = tok.find('=');
      if (eq == std::string::npos) throw ConfigError("dynamic script: expected key=value, got '" + tok + "'");
      std::string key = tok.substr(0, eq);
      std::string val = tok.substr(eq + 1);
      any = true;
      if (key == "events") {
        phase.length = std::stoull(val);
      } else {
        auto colon = val.find(':');
        double a = std::stod(colon == std::string::npos ? val : val.substr(0, colon));
        double b = colon == std::string::npos ? a : std::stod(val.substr(colon + 1));
        phase.trends[key] = {a, b};
      }
    }
    if (any) phases.push_back(std::move(phase));
  }
  return phases;
}

}  // namespace workloads
}  // namespace streamtx
