#pragma once

#include <cmath>
#include <filesystem>
#include <string>

#include <unistd.h>

#include "ecocal/ecocal.hpp"

namespace testing_support {

using namespace ecocal;

inline const BehaviorCatalog& catalog() {
  static const BehaviorCatalog c = BehaviorCatalog::with_fixtures();
  return c;
}

inline ModelDatabase npz_db() { return parse_model_db(fixtures::kNpzModel, catalog()); }
inline ModelDatabase pair_db() { return parse_model_db(fixtures::kLogisticPairModel, catalog()); }

inline Model npz() {
  auto db = npz_db();
  auto m = instantiate(db, catalog());
  m.set_clock(db.clock);
  return m;
}

inline Model pair() {
  auto db = pair_db();
  auto m = instantiate(db, catalog());
  m.set_clock(db.clock);
  return m;
}

inline VarId var(std::string cls, std::string name) { return VarId{{std::move(cls), std::move(name)}}; }
inline ParamId par(std::string cls, std::string name) { return ParamId{{std::move(cls), std::move(name)}}; }

// Closed-form NPZ steady state, written from the model equations independently of the kernel.
struct NpzParams {
  double mumax = 1.5, kN = 2, mP = 0.1, chl_ratio = 0.02, gmax = 0.7, kgraz = 1.5, gamma = 0.45, mZ = 0.14;
};
struct NpzState {
  double N, P, Z, chl;
};
inline NpzState npz_steady(const NpzParams& p, double total = 10.0) {
  const double c = p.mZ / (p.gamma * p.gmax);
  const double a = c * p.kgraz / (1.0 - c);
  const double r = p.mP + p.gmax * (1.0 - c) / p.kgraz;
  const double n = r * p.kN / (p.mumax - r);
  const double z = (total - n) / (1.0 + a);
  return {n, a * z, z, p.chl_ratio * a * z};
}

// Forward Euler on the NPZ equations with `substeps` sub-steps per kernel step.
inline NpzState npz_reference(const NpzParams& p, double dt_days, long steps, int substeps) {
  NpzState s{6, 2, 2, 0.04};
  const double h = dt_days / substeps;
  for (long k = 0; k < steps * substeps; ++k) {
    const double u = p.mumax * s.N / (p.kN + s.N) * s.P;
    const double d = s.P + p.kgraz * s.Z;
    const double g = d > 0 ? p.gmax * s.P * s.Z / d : 0.0;
    const double n = s.N + h * (-u + (1 - p.gamma) * g + p.mP * s.P + p.mZ * s.Z);
    const double ph = s.P + h * (u - g - p.mP * s.P);
    const double z = s.Z + h * (p.gamma * g - p.mZ * s.Z);
    s = {n, ph, z, p.chl_ratio * ph};
  }
  return s;
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("ecocal-" + tag + "-" + std::to_string(reinterpret_cast<std::uintptr_t>(this)) + "-" +
            std::to_string(::getpid()));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

}  // namespace testing_support
