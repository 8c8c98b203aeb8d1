#include "uqdepth/losses.hpp"

#include <cmath>
#include <string>

#include "uqdepth/errors.hpp"

namespace uqd {
namespace {

struct MaskedTarget {
  Array mask;       // 1 on valid pixels, 0 elsewhere
  Array inv_mask;   // 1 - mask
  double count = 0;
};

MaskedTarget prepare(const char* loss, const ad::Var& pred, const Array& gt, const Mask& mask) {
  const Shape expect{mask.height, mask.width};
  if (pred.shape() != expect) {
    throw ShapeError(std::string(loss) + ": prediction shape " + shape_str(pred.shape()) + " vs mask " +
                     shape_str(expect));
  }
  if (gt.shape() != expect) {
    throw ShapeError(std::string(loss) + ": ground truth shape " + shape_str(gt.shape()) + " vs mask " +
                     shape_str(expect));
  }
  MaskedTarget t;
  t.count = static_cast<double>(mask.count());
  if (t.count == 0) throw DomainError(std::string(loss) + ": empty mask (no valid pixels)");
  t.mask = mask.as_array();
  t.inv_mask = Array(expect);
  for (std::size_t i = 0; i < t.mask.size(); ++i) t.inv_mask[i] = 1.0 - t.mask[i];
  return t;
}

void require_positive(const char* loss, const char* what, const Array& v, const Mask& mask) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (mask.valid[i] && !(v[i] > 0)) {
      throw DomainError(std::string(loss) + ": non-positive " + what + " " + std::to_string(v[i]) + " at valid pixel " +
                        std::to_string(i));
    }
  }
}

// log(x) on valid pixels, 0 elsewhere.
ad::Var masked_log(ad::Var x, const MaskedTarget& t) {
  ad::Graph& g = *x.graph;
  return ad::log(ad::add(ad::mul(x, g.leaf(t.mask)), g.leaf(t.inv_mask)));
}

// d_i = log y_i - log gt_i on valid pixels, 0 elsewhere.
ad::Var log_diff(ad::Var y, const Array& gt, const MaskedTarget& t) {
  Array log_gt(gt.shape());
  for (std::size_t i = 0; i < gt.size(); ++i) log_gt[i] = t.mask[i] > 0 ? std::log(gt[i]) : 0.0;
  return ad::sub(masked_log(y, t), y.graph->leaf(std::move(log_gt)));
}

}  // namespace

void LossConfig::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
  if (!(alpha > 0.0)) throw ConfigError("alpha must be positive");
  if (!(variance_floor > 0.0)) throw ConfigError("variance_floor must be positive");
}

ad::Var si_loss(ad::Var y, const Array& gt, const Mask& mask, const LossConfig& cfg) {
  const MaskedTarget t = prepare("si_loss", y, gt, mask);
  require_positive("si_loss", "ground truth", gt, mask);
  require_positive("si_loss", "prediction", y.value(), mask);
  ad::Graph& g = *y.graph;
  const ad::Var d = log_diff(y, gt, t);
  const ad::Var sum_d = ad::sum(d);
  const ad::Var first = ad::div(ad::sum(ad::square(d)), g.constant(t.count));
  const ad::Var second = ad::mul(ad::square(sum_d), g.constant(cfg.lambda / (t.count * t.count)));
  return ad::sub(first, second);
}

ad::Var lc_loss(ad::Var y, ad::Var confidence, const Array& gt, const Mask& mask, const LossConfig& cfg) {
  const MaskedTarget t = prepare("lc_loss", y, gt, mask);
  if (confidence.shape() != y.shape()) {
    throw ShapeError("lc_loss: confidence shape " + shape_str(confidence.shape()) + " vs prediction " +
                     shape_str(y.shape()));
  }
  require_positive("lc_loss", "ground truth", gt, mask);
  require_positive("lc_loss", "prediction", y.value(), mask);
  require_positive("lc_loss", "confidence", confidence.value(), mask);
  ad::Graph& g = *y.graph;
  const ad::Var d = log_diff(y, gt, t);
  const ad::Var per_pixel = ad::mul(ad::square(d), g.constant(1.0 - cfg.lambda));
  const ad::Var weighted = ad::mul(confidence, per_pixel);
  const ad::Var penalty = ad::mul(masked_log(confidence, t), g.constant(cfg.alpha));
  return ad::div(ad::sum(ad::sub(weighted, penalty)), g.constant(t.count));
}

ad::Var gnll_loss(ad::Var mu, ad::Var s2, const Array& gt, const Mask& mask, const LossConfig& cfg) {
  const MaskedTarget t = prepare("gnll_loss", mu, gt, mask);
  if (s2.shape() != mu.shape()) {
    throw ShapeError("gnll_loss: variance shape " + shape_str(s2.shape()) + " vs mean " + shape_str(mu.shape()));
  }
  ad::Graph& g = *mu.graph;
  const ad::Var m = g.leaf(t.mask);
  const ad::Var var = ad::max_elem(s2, g.constant(cfg.variance_floor));
  const ad::Var resid = ad::mul(ad::sub(g.leaf(gt), mu), m);
  const ad::Var nll = ad::add(ad::div(ad::square(resid), var), ad::mul(ad::log(var), m));
  return ad::div(ad::mul(ad::sum(nll), g.constant(0.5)), g.constant(t.count));
}

}  // namespace uqd
