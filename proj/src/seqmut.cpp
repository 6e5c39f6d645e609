#include "mtbd/seqmut.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include <boost/algorithm/string.hpp>

#include "mtbd/error.hpp"

namespace mtbd {

namespace {

constexpr std::string_view kBases = "ACGT";
// Codon table in TCAG order: index 16 b1 + 4 b2 + b3.
constexpr std::string_view kCodeTCAG = "FFLLSSSSYY**CC*WLLLLPPPPHHQQRRRRIIIMTTTTNNKKSSRRVVVVAAAADDEEGGGG";

int tcag_index(char b) {
  switch (b) {
    case 'T': return 0;
    case 'C': return 1;
    case 'A': return 2;
    case 'G': return 3;
    default: return -1;
  }
}

double exponential(Rng& rng, double rate) { return -std::log1p(-uniform01(rng)) / rate; }

std::size_t pick_weighted(const double* w, std::size_t n, double total, Rng& rng) {
  double u = uniform01(rng) * total;
  for (std::size_t i = 0; i < n; ++i) {
    if (u < w[i]) return i;
    u -= w[i];
  }
  for (std::size_t i = n; i-- > 0;)
    if (w[i] > 0.0) return i;
  return 0;
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text, std::size_t columns,
                                                const std::vector<std::string>& header) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  bool seen_header = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    boost::algorithm::trim(line);
    if (line.empty() || line.front() == '#') continue;
    std::vector<std::string> fields;
    boost::algorithm::split(fields, line, boost::is_any_of(","));
    for (auto& f : fields) boost::algorithm::trim(f);
    if (fields.size() != columns)
      throw ValidationError("csv line " + std::to_string(line_no) + ": expected " + std::to_string(columns) +
                            " fields");
    if (!seen_header) {
      seen_header = true;
      if (fields != header)
        throw ValidationError("csv header must be " + boost::algorithm::join(header, ","));
      continue;
    }
    rows.push_back(std::move(fields));
  }
  if (!seen_header) throw ValidationError("csv is empty");
  return rows;
}

double parse_double(const std::string& s) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw ValidationError("cannot parse number '" + s + "'");
  return v;
}

// Shortest round-trip decimal.
std::string fmt(double v) {
  char buf[32];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

}  // namespace

int base_index(char b) {
  const auto pos = kBases.find(b);
  if (pos == std::string_view::npos) throw ValidationError(std::string("invalid nucleotide '") + b + "'");
  return static_cast<int>(pos);
}

char base_char(int i) { return kBases.at(static_cast<std::size_t>(i)); }

void check_sequence(const std::string& seq) {
  for (char c : seq)
    if (kBases.find(c) == std::string_view::npos)
      throw ValidationError(std::string("invalid nucleotide '") + c + "' in sequence");
}

char translate_codon(const char* codon) {
  const int a = tcag_index(codon[0]), b = tcag_index(codon[1]), c = tcag_index(codon[2]);
  if (a < 0 || b < 0 || c < 0) throw ValidationError("codon contains a non-ACGT character");
  return kCodeTCAG[static_cast<std::size_t>(16 * a + 4 * b + c)];
}

std::string translate(const std::string& seq) {
  if (seq.size() % 3 != 0) throw ValidationError("sequence length is not a multiple of 3");
  std::string protein(seq.size() / 3, ' ');
  for (std::size_t i = 0; i < protein.size(); ++i) protein[i] = translate_codon(&seq[3 * i]);
  return protein;
}

// ---------------------------------------------------------------------------

ContextModel::ContextModel(std::size_t k) : k_(k) {
  if (k % 2 == 0) throw ValidationError("context width must be odd");
}

void ContextModel::set_rate(const std::string& context, char to, double rate) {
  if (context.size() != k_)
    throw ValidationError("context '" + context + "' does not have width " + std::to_string(k_));
  for (char c : context)
    if (c != 'N' && kBases.find(c) == std::string_view::npos)
      throw ValidationError("context '" + context + "' has an invalid character");
  if (!(rate >= 0.0) || !std::isfinite(rate)) throw ValidationError("context rates must be non-negative");
  const int t = base_index(to);
  if (context[k_ / 2] == to && rate != 0.0)
    throw ValidationError("self-substitution rate must be zero for context '" + context + "'");
  auto [it, inserted] = table_.try_emplace(context, std::array<double, 4>{0, 0, 0, 0});
  it->second[static_cast<std::size_t>(t)] = rate;
}

void ContextModel::set_default(char to, double rate) {
  if (!(rate >= 0.0) || !std::isfinite(rate)) throw ValidationError("context rates must be non-negative");
  default_[static_cast<std::size_t>(base_index(to))] = rate;
}

std::array<double, 4> ContextModel::site_rates(const std::string& seq, std::size_t pos) const {
  std::string ctx(k_, 'N');
  const std::size_t half = k_ / 2;
  for (std::size_t j = 0; j < k_; ++j) {
    const std::ptrdiff_t p = static_cast<std::ptrdiff_t>(pos + j) - static_cast<std::ptrdiff_t>(half);
    if (p >= 0 && static_cast<std::size_t>(p) < seq.size()) ctx[j] = seq[static_cast<std::size_t>(p)];
  }
  const auto it = table_.find(ctx);
  std::array<double, 4> r = it == table_.end() ? default_ : it->second;
  r[static_cast<std::size_t>(base_index(seq[pos]))] = 0.0;
  return r;
}

std::vector<double> ContextModel::site_hazards(const std::string& seq) const {
  std::vector<double> h(seq.size());
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const auto r = site_rates(seq, i);
    h[i] = r[0] + r[1] + r[2] + r[3];
  }
  return h;
}

ContextModel ContextModel::from_csv(const std::string& text) {
  const auto rows = parse_csv(text, 3, {"context", "to_base", "rate"});
  std::size_t k = 0;
  for (const auto& r : rows)
    if (r[0] != "*") {
      k = r[0].size();
      break;
    }
  ContextModel m(k == 0 ? 1 : k);
  for (const auto& r : rows) {
    if (r[1].size() != 1) throw ValidationError("to_base must be a single nucleotide");
    if (r[0] == "*")
      m.set_default(r[1][0], parse_double(r[2]));
    else
      m.set_rate(r[0], r[1][0], parse_double(r[2]));
  }
  return m;
}

std::string ContextModel::to_csv() const {
  std::ostringstream out;
  out << "context,to_base,rate\n";
  for (int b = 0; b < 4; ++b)
    if (default_[static_cast<std::size_t>(b)] > 0.0)
      out << "*," << base_char(b) << ',' << fmt(default_[static_cast<std::size_t>(b)]) << '\n';
  for (const auto& [ctx, rates] : table_)
    for (int b = 0; b < 4; ++b)
      if (ctx[k_ / 2] != base_char(b)) out << ctx << ',' << base_char(b) << ',' << fmt(rates[static_cast<std::size_t>(b)]) << '\n';
  return out.str();
}

ContextModel ContextModel::uniform(double rate_per_target) {
  ContextModel m(1);
  for (char b : kBases) m.set_default(b, rate_per_target);
  return m;
}

// ---------------------------------------------------------------------------

AffinityModel::AffinityModel(std::string naive, double stop_affinity)
    : naive_(std::move(naive)), stop_affinity_(stop_affinity) {
  check_sequence(naive_);
  naive_protein_ = translate(naive_);
  if (naive_protein_.find('*') != std::string::npos)
    throw ValidationError("naive sequence contains a stop codon");
  effects_.assign(naive_protein_.size(), std::array<double, 26>{});
}

void AffinityModel::set_effect(std::size_t site, char amino_acid, double effect) {
  if (site >= effects_.size()) throw ValidationError("affinity table site " + std::to_string(site) + " out of range");
  if (amino_acid < 'A' || amino_acid > 'Z') throw ValidationError(std::string("invalid amino acid '") + amino_acid + "'");
  if (!std::isfinite(effect)) throw ValidationError("affinity effects must be finite");
  if (amino_acid == naive_protein_[site]) {
    if (std::abs(effect) > 1e-12)
      throw ValidationError("naive amino acid at site " + std::to_string(site) + " must have zero effect");
    return;
  }
  effects_[site][static_cast<std::size_t>(amino_acid - 'A')] = effect;
}

double AffinityModel::effect(std::size_t site, char amino_acid) const {
  if (amino_acid < 'A' || amino_acid > 'Z') return 0.0;
  return effects_.at(site)[static_cast<std::size_t>(amino_acid - 'A')];
}

AffinityModel AffinityModel::from_csv(std::string naive, const std::string& text, double stop_affinity) {
  AffinityModel m(std::move(naive), stop_affinity);
  for (const auto& r : parse_csv(text, 3, {"site", "amino_acid", "effect"})) {
    std::size_t site = 0;
    const auto [ptr, ec] = std::from_chars(r[0].data(), r[0].data() + r[0].size(), site);
    if (ec != std::errc() || ptr != r[0].data() + r[0].size())
      throw ValidationError("cannot parse site '" + r[0] + "'");
    if (r[1].size() != 1) throw ValidationError("amino_acid must be a single letter");
    m.set_effect(site, r[1][0], parse_double(r[2]));
  }
  return m;
}

std::string AffinityModel::to_csv() const {
  std::ostringstream out;
  out << "site,amino_acid,effect\n";
  for (std::size_t s = 0; s < effects_.size(); ++s)
    for (std::size_t a = 0; a < 26; ++a)
      if (effects_[s][a] != 0.0) out << s << ',' << static_cast<char>('A' + a) << ',' << fmt(effects_[s][a]) << '\n';
  return out.str();
}

double affinity_of(const std::string& seq, const AffinityModel& model) {
  return AffinityTracker(model, seq).affinity();
}

AffinityTracker::AffinityTracker(const AffinityModel& model, const std::string& seq) : model_(&model) {
  if (seq.size() != model.naive().size())
    throw ValidationError("sequence length " + std::to_string(seq.size()) + " does not match the naive length " +
                          std::to_string(model.naive().size()));
  check_sequence(seq);
  for (std::size_t c = 0; c < model.codons(); ++c) {
    const char aa = translate_codon(&seq[3 * c]);
    if (aa == '*')
      ++stops_;
    else
      sum_ += model.effect(c, aa);
  }
}

void AffinityTracker::apply(std::string& seq, std::size_t pos, char to) {
  const std::size_t c = pos / 3;
  const char before = translate_codon(&seq[3 * c]);
  seq[pos] = to;
  const char after = translate_codon(&seq[3 * c]);
  if (before == after) return;
  if (before == '*')
    --stops_;
  else
    sum_ -= model_->effect(c, before);
  if (after == '*')
    ++stops_;
  else
    sum_ += model_->effect(c, after);
}

double AffinityTracker::affinity() const { return stops_ > 0 ? model_->stop_affinity() : sum_; }

// ---------------------------------------------------------------------------

namespace {

// Hazard bookkeeping for one sequence under a context model.
class SiteHazards {
 public:
  SiteHazards(const ContextModel& model, const std::string& seq)
      : model_(&model), h_(model.site_hazards(seq)) {
    total_ = sum();
  }

  double total() const { return total_; }
  // Whole-sequence mutation rate in time units.
  double rate() const {
    if (!(total_ > 0.0)) return 0.0;
    return model_->convention == RateConvention::per_site ? model_->overall_rate * total_
                                                          : model_->overall_rate;
  }

  std::size_t pick_site(Rng& rng) const { return pick_weighted(h_.data(), h_.size(), total_, rng); }

  void refresh_around(const std::string& seq, std::size_t pos) {
    const std::size_t half = model_->k() / 2;
    const std::size_t lo = pos >= half ? pos - half : 0;
    const std::size_t hi = std::min(seq.size() - 1, pos + half);
    for (std::size_t i = lo; i <= hi; ++i) {
      const auto r = model_->site_rates(seq, i);
      h_[i] = r[0] + r[1] + r[2] + r[3];
    }
    total_ = sum();
  }

 private:
  double sum() const {
    double s = 0.0;
    for (double v : h_) s += v;
    return s;
  }

  const ContextModel* model_;
  std::vector<double> h_;
  double total_ = 0.0;
};

char pick_target(const ContextModel& model, const std::string& seq, std::size_t pos, Rng& rng) {
  const auto r = model.site_rates(seq, pos);
  return base_char(static_cast<int>(pick_weighted(r.data(), 4, r[0] + r[1] + r[2] + r[3], rng)));
}

}  // namespace

MutationChain mutate_chain(const std::string& seq, const ContextModel& model, double duration, Rng& rng) {
  check_sequence(seq);
  if (!(duration > 0.0)) throw ValidationError("chain duration must be positive");
  if (!(model.overall_rate >= 0.0)) throw ValidationError("overall mutation rate must be non-negative");
  MutationChain chain{seq, duration, {}};
  std::string cur = seq;
  SiteHazards hz(model, cur);
  double t = 0.0;
  for (;;) {
    const double rate = hz.rate();
    if (!(rate > 0.0)) break;
    t += exponential(rng, rate);
    if (t >= duration) break;
    const std::size_t pos = hz.pick_site(rng);
    const char to = pick_target(model, cur, pos, rng);
    chain.mutations.push_back({t, pos, cur[pos], to});
    cur[pos] = to;
    hz.refresh_around(cur, pos);
  }
  return chain;
}

TypeTrajectory to_trajectory(const MutationChain& chain, const AffinityModel& affinity,
                             const TypeSpace& space) {
  std::string cur = chain.initial;
  AffinityTracker tracker(affinity, cur);
  TypeTrajectory path;
  path.duration = chain.duration;
  path.initial_state = static_cast<int>(bin_index(space, tracker.affinity()));
  int state = path.initial_state;
  for (const auto& m : chain.mutations) {
    if (cur[m.site] != m.from) throw ValidationError("mutation chain is inconsistent with its sequence");
    tracker.apply(cur, m.site, m.to);
    const int next = static_cast<int>(bin_index(space, tracker.affinity()));
    if (next != state) {
      path.jumps.emplace_back(m.time, next);
      state = next;
    }
  }
  return path;
}

SquareMatrix estimate_gamma(const std::vector<TypeTrajectory>& paths, std::size_t n_types) {
  if (paths.empty()) throw ValidationError("estimate_gamma needs at least one chain");
  std::vector<double> dwell(n_types, 0.0);
  SquareMatrix counts(n_types);
  for (const auto& p : paths) {
    auto in_range = [&](int s) {
      if (s < 0 || static_cast<std::size_t>(s) >= n_types) throw ValidationError("trajectory state out of range");
      return static_cast<std::size_t>(s);
    };
    std::size_t state = in_range(p.initial_state);
    double t = 0.0;
    for (const auto& [time, next] : p.jumps) {
      if (time < t || time > p.duration) throw ValidationError("trajectory jump times must increase within the duration");
      dwell[state] += time - t;
      const std::size_t to = in_range(next);
      if (to != state) counts(state, to) += 1.0;
      state = to;
      t = time;
    }
    dwell[state] += p.duration - t;
  }
  std::string empty;
  for (std::size_t x = 0; x < n_types; ++x)
    if (!(dwell[x] > 0.0)) empty += (empty.empty() ? "" : ", ") + std::to_string(x);
  if (!empty.empty()) throw ValidationError("no dwell time in bin(s) " + empty);

  SquareMatrix g(n_types);
  for (std::size_t x = 0; x < n_types; ++x) {
    double row = 0.0;
    for (std::size_t z = 0; z < n_types; ++z)
      if (z != x) {
        g(x, z) = counts(x, z) / dwell[x];
        row += g(x, z);
      }
    g(x, x) = -row;
  }
  return g;
}

SquareMatrix estimate_gamma(const std::vector<MutationChain>& chains, const AffinityModel& affinity,
                            const TypeSpace& space) {
  std::vector<TypeTrajectory> paths;
  paths.reserve(chains.size());
  for (const auto& c : chains) paths.push_back(to_trajectory(c, affinity, space));
  return estimate_gamma(paths, space.size());
}

TypeTrajectory simulate_ctmc(const SquareMatrix& q, int start, double duration, Rng& rng) {
  const std::size_t n = q.size();
  TypeTrajectory path;
  path.initial_state = start;
  path.duration = duration;
  std::vector<double> row(n);
  auto state = static_cast<std::size_t>(start);
  double t = 0.0;
  for (;;) {
    double out = 0.0;
    for (std::size_t z = 0; z < n; ++z) {
      row[z] = z == state ? 0.0 : q(state, z);
      out += row[z];
    }
    if (!(out > 0.0)) break;
    t += exponential(rng, out);
    if (t >= duration) break;
    state = pick_weighted(row.data(), n, out, rng);
    path.jumps.emplace_back(t, static_cast<int>(state));
  }
  return path;
}

// ---------------------------------------------------------------------------

namespace {

// Binary indexed tree over per-lineage weights with swap-remove support.
class WeightTree {
 public:
  std::size_t size() const { return values_.size(); }
  double total() const { return total_; }
  double value(std::size_t i) const { return values_[i]; }

  void push(double w) {
    values_.push_back(w);
    if (values_.size() > capacity_) {
      rebuild(std::max<std::size_t>(64, 2 * capacity_));
    } else {
      add(values_.size() - 1, w);
    }
  }
  void set(std::size_t i, double w) {
    const double d = w - values_[i];
    values_[i] = w;
    add(i, d);
  }
  // Moves the last entry into slot i and drops the last slot.
  void swap_remove(std::size_t i) {
    const std::size_t last = values_.size() - 1;
    if (i != last) set(i, values_[last]);
    set(last, 0.0);
    values_.pop_back();
  }
  // Index whose cumulative interval contains u in [0, total).
  std::size_t find(double u) const {
    std::size_t pos = 0;
    for (std::size_t step = top_bit_; step > 0; step >>= 1) {
      const std::size_t next = pos + step;
      if (next <= capacity_ && tree_[next] <= u) {
        pos = next;
        u -= tree_[next];
      }
    }
    return std::min(pos, values_.size() - 1);
  }

 private:
  void add(std::size_t i, double d) {
    total_ += d;
    for (std::size_t k = i + 1; k <= capacity_; k += k & (~k + 1)) tree_[k] += d;
    if (++updates_ % 65536 == 0) rebuild(capacity_);
  }
  void rebuild(std::size_t capacity) {
    capacity_ = capacity;
    top_bit_ = 1;
    while (top_bit_ * 2 <= capacity_) top_bit_ *= 2;
    tree_.assign(capacity_ + 1, 0.0);
    total_ = 0.0;
    for (std::size_t i = 0; i < values_.size(); ++i) {
      tree_[i + 1] += values_[i];
      total_ += values_[i];
    }
    for (std::size_t k = 1; k <= capacity_; ++k) {
      const std::size_t parent = k + (k & (~k + 1));
      if (parent <= capacity_) tree_[parent] += tree_[k];
    }
  }

  std::vector<double> values_;
  std::vector<double> tree_{0.0};
  std::size_t capacity_ = 0;
  std::size_t top_bit_ = 0;
  std::size_t updates_ = 0;
  double total_ = 0.0;
};

struct SeqLineage {
  int node;
  int state;
  std::string seq;
  AffinityTracker tracker;
  SiteHazards hazards;
};

}  // namespace

Tree simulate_with_sequences(const SigmoidParams& phi, double mu, const TypeSpace& space,
                             const AffinityModel& affinity, const ContextModel& context,
                             const SequenceSimOptions& opts, Rng& rng, SimStats* stats) {
  if (!phi.valid()) throw ValidationError("sigmoid parameters must have phi1, phi2, phi4 > 0");
  if (!(mu >= 0.0)) throw ValidationError("death rate must be non-negative");
  SimOptions sim = opts.sim;
  sim.root_state = 0;
  sim.check(space.size());
  const bool hard = sim.capacity && sim.capacity->mode == CapacityMode::hard;
  const std::size_t K = sim.capacity ? sim.capacity->K : 0;

  auto birth_of = [&](const SeqLineage& l) {
    return opts.birth_from_bin_value ? birth_rate(phi, space.value(static_cast<std::size_t>(l.state)))
                                     : birth_rate(phi, l.tracker.affinity());
  };

  Tree tree;
  int next_id = 0;
  auto add_node = [&](std::optional<int> parent, double tau, Event ev, const SeqLineage& l) {
    const int id = next_id++;
    tree.nodes.push_back(
        {id, parent, std::max(0.0, sim.t_total - tau), ev, l.state, l.tracker.affinity()});
    return id;
  };

  std::vector<SeqLineage> alive;
  WeightTree births, mutations;
  auto push = [&](SeqLineage l) {
    births.push(birth_of(l));
    mutations.push(l.hazards.rate());
    alive.push_back(std::move(l));
  };
  auto remove = [&](std::size_t i) {
    births.swap_remove(i);
    mutations.swap_remove(i);
    if (i != alive.size() - 1) alive[i] = std::move(alive.back());
    alive.pop_back();
  };

  {
    std::string naive = affinity.naive();
    AffinityTracker tracker(affinity, naive);
    SiteHazards hz(context, naive);
    const int state = static_cast<int>(bin_index(space, tracker.affinity()));
    SeqLineage root{0, state, std::move(naive), tracker, std::move(hz)};
    root.node = add_node(std::nullopt, 0.0, Event::root, root);
    push(std::move(root));
  }

  SimStats st;
  st.max_alive = 1;
  double tau = 0.0;
  while (!alive.empty()) {
    const double factor = capacity_factor(alive.size(), sim);
    const double b_total = factor * births.total();
    const double d_total = mu * static_cast<double>(alive.size());
    const double m_total = std::max(0.0, mutations.total());
    const double total = b_total + d_total + m_total;
    if (!(total > 0.0)) break;
    tau += exponential(rng, total);
    if (tau >= sim.t_total) break;
    if (++st.events > sim.max_events)
      throw NumericalError("population explosion guard: more than " + std::to_string(sim.max_events) +
                           " events");

    const double u = uniform01(rng) * total;
    if (u < b_total) {
      const std::size_t i = births.find(u / factor);
      if (hard && alive.size() + 1 > K) {
        const std::size_t victim = std::uniform_int_distribution<std::size_t>(0, alive.size())(rng);
        ++st.capacity_deaths;
        if (victim == i || victim == alive.size()) continue;
        const int b = add_node(alive[i].node, tau, Event::birth, alive[i]);
        alive[i].node = b;
        push(alive[i]);
        add_node(alive[victim].node, tau, Event::death_leaf, alive[victim]);
        remove(victim);
        continue;
      }
      const int b = add_node(alive[i].node, tau, Event::birth, alive[i]);
      alive[i].node = b;
      push(alive[i]);
      st.max_alive = std::max(st.max_alive, alive.size());
    } else if (u < b_total + d_total) {
      const std::size_t i = std::uniform_int_distribution<std::size_t>(0, alive.size() - 1)(rng);
      add_node(alive[i].node, tau, Event::death_leaf, alive[i]);
      remove(i);
    } else {
      const std::size_t i = mutations.find(std::min(u - b_total - d_total, m_total * (1 - 1e-16)));
      SeqLineage& l = alive[i];
      const std::size_t pos = l.hazards.pick_site(rng);
      const char to = pick_target(context, l.seq, pos, rng);
      l.tracker.apply(l.seq, pos, to);
      l.hazards.refresh_around(l.seq, pos);
      mutations.set(i, l.hazards.rate());
      const int state = static_cast<int>(bin_index(space, l.tracker.affinity()));
      if (state != l.state) {
        l.state = state;
        l.node = add_node(l.node, tau, Event::type_change, l);
      }
      births.set(i, birth_of(l));
    }
  }

  st.final_alive = alive.size();
  for (const auto& l : alive) add_node(l.node, sim.t_total, Event::sampled_leaf, l);
  for (auto& n : tree.nodes)
    if (n.event == Event::sampled_leaf) n.time = 0.0;
  if (stats) *stats = st;
  return tree;
}

}  // namespace mtbd
