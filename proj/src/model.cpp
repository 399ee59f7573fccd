#include "hpf/model.hpp"

#include <cmath>
#include <cstring>
#include <string>

#include "hpf/error.hpp"

namespace hpf {

DivisibleLearner::DivisibleLearner(std::size_t n, const ParameterSet& w_set, double gamma, double eta,
                                   const FtalOptions& options)
    : ftal_(n, w_set, gamma, options), switching_(2, eta) {}

double DivisibleLearner::mix(double u, double v) const {
  const Vector& m = switching_.mantissa();
  return (m[0] * u + m[1] * v) / (m[0] + m[1]);
}

void DivisibleLearner::update(const LossFunction& loss, const Vector& x, double u, double v,
                              double alpha) {
  ftal_.update(loss, x);
  Vector losses(2);
  losses << loss.eval(u), loss.eval(v);
  switching_.update(losses, alpha);
}

// ---------------------------------------------------------------------------

HpfModel::HpfModel(HierarchicalPartition h, std::size_t n, HpfOptions options)
    : h_(std::move(h)), n_(n), options_(std::move(options)) {
  if (n_ == 0) throw InvalidArgument("HPF needs feature dimension >= 1");
  if (options_.w_set.dimension() != n_) throw InvalidArgument("parameter set dimension differs from n");
  if (!(options_.gamma > 0.0)) throw InvalidArgument("gamma must be positive");
  if (!(options_.eta > 0.0)) throw InvalidArgument("eta must be positive");
  // constructing one learner up front surfaces configuration errors early
  FtalLearner probe(n_, options_.w_set, options_.gamma, options_.ftal);
  uniform_ = probe.state().w;
  leaves_.resize(h_.size());
  divisible_.resize(h_.size());
  activity_.assign(h_.size(), 0);
  segment_loss_.assign(h_.size(), 0.0);
}

double HpfModel::base_forecast(SegmentId s, const Vector& x) const {
  if (h_.divisible(s)) {
    const auto& d = divisible_[s];
    return d ? d->ftal().predict(x) : uniform_.dot(x);
  }
  const auto& l = leaves_[s];
  return l ? l->predict(x) : uniform_.dot(x);
}

Trace HpfModel::trace(const Vector& key, const Vector& x) const {
  if (static_cast<std::size_t>(x.size()) != n_) throw InvalidArgument("feature dimension does not match model");
  const std::vector<SegmentId> path = h_.route(key);
  Trace out(path.size());
  for (std::size_t k = path.size(); k-- > 0;) {
    const SegmentId s = path[k];
    TraceEntry& e = out[k];
    e.segment = s;
    e.u = base_forecast(s, x);
    if (k + 1 == path.size()) {
      e.h = e.u;
    } else {
      const auto& d = divisible_[s];
      const double v = out[k + 1].h;
      e.h = d ? d->mix(e.u, v) : 0.5 * e.u + 0.5 * v;
    }
  }
  return out;
}

double HpfModel::predict(const Vector& key, const Vector& x) const { return trace(key, x).front().h; }

Trace HpfModel::update(const Vector& key, const Vector& x, const LossFunction& loss) {
  const Trace tr = trace(key, x);
  ++t_;
  for (std::size_t k = 0; k < tr.size(); ++k) {
    const SegmentId s = tr[k].segment;
    ++activity_[s];
    segment_loss_[s] += loss.eval(tr[k].h);
    if (k + 1 == tr.size()) {
      leaf_learner_mut(s).update(loss, x);
    } else {
      const std::size_t clock = options_.global_switch_clock ? t_ : activity_[s];
      const double alpha = 1.0 / (static_cast<double>(clock) + 1.0);
      divisible_learner_mut(s).update(loss, x, tr[k].u, tr[k + 1].h, alpha);
    }
  }
  return tr;
}

const FtalLearner* HpfModel::leaf_learner(SegmentId s) const { return leaves_.at(s).get(); }

const DivisibleLearner* HpfModel::divisible_learner(SegmentId s) const { return divisible_.at(s).get(); }

DivisibleLearner& HpfModel::divisible_learner_mut(SegmentId s) {
  if (!h_.divisible(s)) throw InvalidArgument("segment " + std::to_string(s) + " is indivisible");
  auto& d = divisible_.at(s);
  if (!d) d = std::make_unique<DivisibleLearner>(n_, options_.w_set, options_.gamma, options_.eta, options_.ftal);
  return *d;
}

FtalLearner& HpfModel::leaf_learner_mut(SegmentId s) {
  if (h_.divisible(s)) throw InvalidArgument("segment " + std::to_string(s) + " is divisible");
  auto& l = leaves_.at(s);
  if (!l) l = std::make_unique<FtalLearner>(n_, options_.w_set, options_.gamma, options_.ftal);
  return *l;
}

namespace {

struct Fnv {
  std::uint64_t value = 1469598103934665603ULL;

  void bytes(const void* data, std::size_t size) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
      value ^= p[i];
      value *= 1099511628211ULL;
    }
  }
  template <class T>
  void pod(const T& v) {
    bytes(&v, sizeof(T));
  }
  template <class M>
  void dense(const M& m) {
    pod(m.rows());
    pod(m.cols());
    bytes(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
  }
};

void hash_ftal(Fnv& f, const FtalLearner& l) {
  const FtalState& s = l.state();
  f.dense(s.A);
  f.dense(s.b);
  f.dense(s.w);
  f.pod(s.gamma);
  f.pod(s.t);
  const IncrementalFactor& inc = l.incremental_factor();
  f.dense(inc.basis);
  f.dense(inc.factor);
  f.pod(inc.rank);
  f.pod(inc.since_refresh);
}

}  // namespace

std::uint64_t HpfModel::state_checksum(SegmentId s) const {
  Fnv f;
  f.pod(s);
  f.pod(activity_.at(s));
  f.pod(segment_loss_.at(s));
  if (const auto* l = leaves_.at(s).get()) hash_ftal(f, *l);
  if (const auto* d = divisible_.at(s).get()) {
    hash_ftal(f, d->ftal());
    f.dense(d->switching().mantissa());
    f.pod(d->switching().exponent());
    f.pod(d->switching().t());
  }
  return f.value;
}

void HpfModel::restore_counters(std::size_t t, std::vector<std::size_t> activity,
                                std::vector<double> segment_loss) {
  if (activity.size() != h_.size() || segment_loss.size() != h_.size()) {
    throw InvalidArgument("checkpoint counters do not match the partition");
  }
  t_ = t;
  activity_ = std::move(activity);
  segment_loss_ = std::move(segment_loss);
}

// ---------------------------------------------------------------------------

CpfModel::CpfModel(const HierarchicalPartition& h, InducedPartition p, std::map<SegmentId, Vector> weights)
    : h_(&h), p_(std::move(p)), weights_(std::move(weights)) {
  if (!is_induced(h, p_)) throw InvalidArgument("CPF partition is not induced by the hierarchy");
  if (weights_.size() != p_.size()) throw InvalidArgument("CPF needs one weight vector per segment");
  for (SegmentId s : p_.segment_ids) {
    if (!weights_.count(s)) throw InvalidArgument("CPF weights miss segment " + std::to_string(s));
  }
}

double CpfModel::predict(const Vector& key, const Vector& x) const {
  SegmentId s = 0;
  try {
    s = member_containing(*h_, p_, key);
  } catch (const OutOfDomain& e) {
    throw InvalidArgument(std::string("no CPF segment contains the point: ") + e.what());
  }
  const Vector& w = weights_.at(s);
  if (w.size() != x.size()) throw InvalidArgument("CPF weight dimension differs from the feature");
  return w.dot(x);
}

double CpfModel::loss(const Stream& stream) const {
  double total = 0.0;
  for (const Observation& o : stream) total += o.loss.eval(predict(o.route_key(), o.x));
  return total;
}

double lhpf_regret_bound(std::size_t n, double eta, double G, double D, std::size_t p_size,
                         std::size_t c, std::size_t T) {
  if (n == 0 || p_size == 0 || T == 0 || !(eta > 0.0) || !(G > 0.0) || !(D > 0.0)) {
    throw InvalidArgument("regret bound parameters must be positive");
  }
  const double a = 64.0 * static_cast<double>(n) * (1.0 / eta + G * D);
  const double b = 1.0 / eta;
  return (a * static_cast<double>(p_size) + b * static_cast<double>(c)) *
         (1.0 + std::log(static_cast<double>(T)));
}

RunLog run_hpf(HpfModel& model, const Stream& stream, std::vector<Trace>* traces) {
  RunLog log;
  log.predictions.reserve(stream.size());
  log.losses.reserve(stream.size());
  log.gradient_norms.reserve(stream.size());
  for (const Observation& o : stream) {
    const Trace tr = model.trace(o.route_key(), o.x);
    // gradient norms at the pre-update weights of every learner on the path
    double gmax = 0.0;
    for (const TraceEntry& e : tr) gmax = std::max(gmax, std::abs(o.loss.derivative(e.u)) * o.x.norm());
    model.update(o);
    const double y = tr.front().h;
    if (traces != nullptr) traces->push_back(tr);
    const double l = o.loss.eval(y);
    log.predictions.push_back(y);
    log.losses.push_back(l);
    log.gradient_norms.push_back(gmax);
    log.total_loss += l;
  }
  log.activity.resize(model.partition().size());
  log.segment_loss.resize(model.partition().size());
  for (SegmentId s = 0; s < model.partition().size(); ++s) {
    log.activity[s] = model.activity(s);
    log.segment_loss[s] = model.segment_loss(s);
  }
  return log;
}

}  // namespace hpf
