#pragma once

// Behavior catalog and the two bundled fixture models.
//
// npz (rates per day, dt in seconds, h = dt / 86400):
//   U = mumax * N / (kN + N) * P            nutrient uptake
//   G = gmax * P * Z / (P + kgraz * Z)      ratio-dependent grazing
//   P' = P + h * (U - G - mP * P)
//   Z' = Z + h * (gamma * G - mZ * Z)
//   N' = N + h * (-U + (1 - gamma) * G + mP * P + mZ * Z)
//   chl' = chl_ratio * P'
// N + P + Z is conserved. With c = mZ / (gamma * gmax) and a = c * kgraz / (1 - c),
// the interior steady state is
//   N* = R * kN / (mumax - R),  R = mP + gmax * (1 - c) / kgraz
//   Z* = (N0 + P0 + Z0 - N*) / (1 + a),  P* = a * Z*
//
// logistic-pair:
//   signal' = level + amplitude * sin(2 pi t' / 86400)   (Forcing)
//   Forcing pushes its start-of-step signal into Logistic.forcing by Update
//   B' = B + h * r * F * B * (1 - B / K)                  (Logistic)

#include <cmath>
#include <map>
#include <numbers>
#include <string>
#include <string_view>

#include "ecocal/kernel.hpp"

namespace ecocal {

class BehaviorCatalog {
 public:
  void add(std::string name, Behavior behavior) { entries_[std::move(name)] = std::move(behavior); }

  const Behavior* find(std::string_view name) const {
    auto it = entries_.find(name);
    return it == entries_.end() ? nullptr : &it->second;
  }

  bool contains(std::string_view name) const { return find(name) != nullptr; }

  static BehaviorCatalog with_fixtures();

 private:
  std::map<std::string, Behavior, std::less<>> entries_;
};

namespace fixtures {

inline constexpr double kSecondsPerDay = 86400.0;

inline double ratio_grazing(double gmax, double kgraz, double p, double z) {
  const double denom = p + kgraz * z;
  return denom > 0.0 ? gmax * p * z / denom : 0.0;
}

inline void npz_nutrient(ShellPort& shell, ClassState& self) {
  const double h = shell.dt() / kSecondsPerDay;
  const double n = self.get("N");
  const double p = shell.inquire("Phytoplankton", "biomass");
  const double z = shell.inquire("Zooplankton", "biomass");
  const double mumax = shell.inquire("Phytoplankton", "mumax");
  const double kn = shell.inquire("Phytoplankton", "kN");
  const double mp = shell.inquire("Phytoplankton", "mP");
  const double gmax = shell.inquire("Zooplankton", "gmax");
  const double kgraz = shell.inquire("Zooplankton", "kgraz");
  const double gamma = shell.inquire("Zooplankton", "gamma");
  const double mz = shell.inquire("Zooplankton", "mZ");
  const double uptake = mumax * n / (kn + n) * p;
  const double grazing = ratio_grazing(gmax, kgraz, p, z);
  self.set("N", n + h * (-uptake + (1.0 - gamma) * grazing + mp * p + mz * z));
}

inline void npz_phytoplankton(ShellPort& shell, ClassState& self) {
  const double h = shell.dt() / kSecondsPerDay;
  const double p = self.get("biomass");
  const double n = shell.inquire("Nutrient", "N");
  const double z = shell.inquire("Zooplankton", "biomass");
  const double gmax = shell.inquire("Zooplankton", "gmax");
  const double kgraz = shell.inquire("Zooplankton", "kgraz");
  const double uptake = self.param("mumax") * n / (self.param("kN") + n) * p;
  const double grazing = ratio_grazing(gmax, kgraz, p, z);
  const double next = p + h * (uptake - grazing - self.param("mP") * p);
  self.set("biomass", next);
  self.set("chl", self.param("chl_ratio") * next);
}

inline void npz_zooplankton(ShellPort& shell, ClassState& self) {
  const double h = shell.dt() / kSecondsPerDay;
  const double z = self.get("biomass");
  const double p = shell.inquire("Phytoplankton", "biomass");
  const double grazing = ratio_grazing(self.param("gmax"), self.param("kgraz"), p, z);
  self.set("biomass", z + h * (self.param("gamma") * grazing - self.param("mZ") * z));
}

inline void logistic_forcing(ShellPort& shell, ClassState& self) {
  const double signal = self.get("signal");
  shell.update("Logistic", "forcing", signal);
  const double t_next = shell.time() + shell.dt();
  self.set("signal", self.param("level") +
                         self.param("amplitude") * std::sin(2.0 * std::numbers::pi * t_next / kSecondsPerDay));
}

inline void logistic_growth(ShellPort& shell, ClassState& self) {
  const double h = shell.dt() / kSecondsPerDay;
  const double b = self.get("biomass");
  const double f = self.get("forcing");
  const double k = self.param("K");
  self.set("biomass", b + h * self.param("r") * f * b * (1.0 - b / k));
}

inline constexpr std::string_view kNpzModel = R"(# Nutrient-phytoplankton-zooplankton box model (0D, closed).
# Rates are per day; the clock is in seconds.
model npz
clock t0=0 dt=3600 horizon=5184000
conserved Nutrient.N Phytoplankton.biomass Zooplankton.biomass
class name=Nutrient code=1 behavior=npz.nutrient
class name=Phytoplankton code=2 behavior=npz.phytoplankton
class name=Zooplankton code=3 behavior=npz.zooplankton
var class=Nutrient name=N init=6 unit=mmolN/m3
param class=Phytoplankton name=mumax value=1.5 min=1.425 max=1.65 unit=1/d
param class=Phytoplankton name=kN value=2 min=0.5 max=5 unit=mmolN/m3
param class=Phytoplankton name=mP value=0.1 min=0.05 max=0.2 unit=1/d
param class=Phytoplankton name=chl_ratio value=0.02 min=0.01 max=0.04 unit=mgChl/mmolN
var class=Phytoplankton name=biomass init=2 min=0.5 max=12 unit=mmolN/m3
var class=Phytoplankton name=chl init=0.04 unit=mgChl/m3
param class=Zooplankton name=gmax value=0.7 min=0.665 max=0.77 unit=1/d
param class=Zooplankton name=kgraz value=1.5 min=1.2 max=2.1 unit=-
param class=Zooplankton name=gamma value=0.45 min=0.4275 max=0.495 unit=-
param class=Zooplankton name=mZ value=0.14 min=0.126 max=0.168 unit=1/d
var class=Zooplankton name=biomass init=2 unit=mmolN/m3
)";

inline constexpr std::string_view kLogisticPairModel = R"(# A periodic forcing class driving a logistic-growth class.
model logistic-pair
clock t0=0 dt=3600 horizon=2592000 period=86400
class name=Forcing code=1 behavior=logistic-pair.forcing
class name=Logistic code=2 behavior=logistic-pair.logistic
param class=Forcing name=level value=1 min=0.5 max=1.5 unit=-
param class=Forcing name=amplitude value=0.3 min=0 max=0.6 unit=-
var class=Forcing name=signal init=1 min=0 max=2 unit=-
param class=Logistic name=r value=0.5 min=0 max=1.5 unit=1/d
param class=Logistic name=K value=10 min=5 max=20 unit=gC/m2
var class=Logistic name=biomass init=1 unit=gC/m2
var class=Logistic name=forcing init=1 unit=-
)";

}  // namespace fixtures

inline BehaviorCatalog BehaviorCatalog::with_fixtures() {
  BehaviorCatalog c;
  c.add("npz.nutrient", fixtures::npz_nutrient);
  c.add("npz.phytoplankton", fixtures::npz_phytoplankton);
  c.add("npz.zooplankton", fixtures::npz_zooplankton);
  c.add("logistic-pair.forcing", fixtures::logistic_forcing);
  c.add("logistic-pair.logistic", fixtures::logistic_growth);
  return c;
}

}  // namespace ecocal
