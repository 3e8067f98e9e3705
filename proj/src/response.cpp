#include "laspet/response.hpp"

#include <stdexcept>

namespace laspet {

void QpetThresholds::validate() const {
  if (!(t12 > 0.0 && t12 < t23 && t23 < t34 && t34 < t45))
    throw std::invalid_argument("QpetThresholds: must be positive and strictly ascending");
}

int qpet_to_ds(std::optional<double> q, const QpetThresholds& th) {
  th.validate();
  if (!q.has_value()) return 1;
  if (*q < th.t12) return 1;
  if (*q < th.t23) return 2;
  if (*q < th.t34) return 3;
  if (*q < th.t45) return 4;
  return 5;
}

int patient_ds(const LesionSet& lesions) {
  int best = 1;
  for (const Lesion& l : lesions.lesions)
    if (l.lds.has_value() && *l.lds > best) best = *l.lds;
  return best;
}

ResponseLabel make_response_label(int ds) {
  if (ds < 1 || ds > 5) throw std::invalid_argument("make_response_label: ds out of 1..5");
  ResponseLabel r;
  r.patient_ds = ds;
  r.binary_3plus = ds >= 3;
  r.binary_4plus = ds >= 4;
  return r;
}

}  // namespace laspet
