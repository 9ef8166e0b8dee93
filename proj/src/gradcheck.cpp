#include "wavediff/gradcheck.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "wavediff/rng.hpp"

namespace wavediff {

const GradCheckEntry& GradCheckReport::entry(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.name == name) return e;
  }
  throw std::out_of_range("gradcheck: no entry named " + name);
}

namespace {

double eval_loss(const LossBuilder& f, const std::vector<std::pair<std::string, NDTensor>>& params,
                 bool with_grad, std::vector<ag::Value>* leaves_out, ag::Tape* tape) {
  std::vector<ag::Value> leaves;
  leaves.reserve(params.size());
  for (const auto& [name, t] : params) leaves.push_back(tape->leaf(t, with_grad));
  ag::Value loss = f(*tape, leaves);
  if (loss.size() != 1) throw std::invalid_argument("gradcheck: loss must be scalar");
  if (leaves_out) *leaves_out = leaves;
  return loss.val().item();
}

}  // namespace

GradCheckReport gradcheck(const LossBuilder& f,
                          const std::vector<std::pair<std::string, NDTensor>>& params,
                          const GradCheckOptions& opt) {
  GradCheckReport report;

  ag::Tape tape;
  std::vector<ag::Value> leaves;
  for (const auto& [name, t] : params) leaves.push_back(tape.leaf(t, true));
  ag::Value loss = f(tape, leaves);
  if (loss.size() != 1) throw std::invalid_argument("gradcheck: loss must be scalar");
  report.loss = loss.val().item();

  {
    ag::Tape tape2;
    double again = eval_loss(f, params, false, nullptr, &tape2);
    if (std::memcmp(&again, &report.loss, sizeof(double)) != 0) {
      throw std::runtime_error("gradcheck: loss is nondeterministic across evaluations");
    }
  }

  auto grads = tape.backward(loss);

  RngStream pick(opt.seed, "gradcheck");
  auto fd_params = params;  // mutable copy for perturbations

  for (size_t pi = 0; pi < params.size(); ++pi) {
    GradCheckEntry entry;
    entry.name = params[pi].first;
    const NDTensor* analytic = nullptr;
    auto it = grads.find(leaves[pi].id);
    NDTensor zero_grad;
    if (it != grads.end()) {
      analytic = &it->second.val();
    } else {
      zero_grad = NDTensor::zeros(params[pi].second.shape());
      analytic = &zero_grad;
    }

    const int64_t n = params[pi].second.size();
    std::vector<int64_t> coords;
    if (opt.max_coords <= 0 || n <= opt.max_coords) {
      coords.resize(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
    } else {
      for (int64_t i = 0; i < opt.max_coords; ++i) {
        coords.push_back(static_cast<int64_t>(pick.uniform_index(static_cast<uint64_t>(n))));
      }
    }

    for (int64_t c : coords) {
      NDTensor& t = fd_params[pi].second;
      const double orig = t[c];
      t[c] = orig + opt.step;
      ag::Tape tp;
      const double fplus = eval_loss(f, fd_params, false, nullptr, &tp);
      t[c] = orig - opt.step;
      ag::Tape tm;
      const double fminus = eval_loss(f, fd_params, false, nullptr, &tm);
      t[c] = orig;

      const double fd = (fplus - fminus) / (2.0 * opt.step);
      const double ad = (*analytic)[c];
      const double denom = std::max({std::fabs(ad), std::fabs(fd), 1e-3});
      const double rel = std::fabs(ad - fd) / denom;
      entry.max_rel_err = std::max(entry.max_rel_err, rel);
      ++entry.coords_checked;
    }
    entry.pass = entry.max_rel_err < opt.tolerance;
    report.pass = report.pass && entry.pass;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace wavediff
