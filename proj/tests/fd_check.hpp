#pragma once

// Central finite-difference gradient oracle. Runs in 64-bit; independent of
// the tape's backward rules by construction (it only calls forward).

#include <functional>
#include <vector>

#include "genfeat/tensor.hpp"

namespace gf::test {

struct FdReport {
  double max_rel_err = 0;
  int checked = 0;
};

// loss_fn builds the graph on the given tape from the current input values and
// returns a scalar loss. Inputs are perturbed in place between evaluations.
inline FdReport check_gradients(std::vector<gf::TensorD*> inputs,
                                const std::function<gf::TensorD(gf::Tape<double>&)>& loss_fn,
                                double h = 1e-5) {
  FdReport rep;
  gf::Tape<double> tape;
  auto loss = loss_fn(tape);
  auto grads = tape.backward(loss);
  for (auto* in : inputs) {
    auto analytic = grads.of(*in);
    for (size_t i = 0; i < in->size(); ++i) {
      double orig = (*in->data)[i];
      (*in->data)[i] = orig + h;
      gf::Tape<double> tp;
      tp.recording = false;
      double fp = loss_fn(tp).item();
      (*in->data)[i] = orig - h;
      gf::Tape<double> tm;
      tm.recording = false;
      double fm = loss_fn(tm).item();
      (*in->data)[i] = orig;
      double fd = (fp - fm) / (2 * h);
      double denom = std::max({1.0, std::abs(fd), std::abs(analytic[i])});
      double rel = std::abs(fd - analytic[i]) / denom;
      rep.max_rel_err = std::max(rep.max_rel_err, rel);
      ++rep.checked;
    }
  }
  return rep;
}

}  // namespace gf::test
