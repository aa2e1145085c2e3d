// Internal: structural handling of redundant active rows in reduced KKT
// systems. Shared by the solver's polish step and the implicit-diff path.
#pragma once

#include <vector>

#include "lme/qp.hpp"

namespace lme::detail {

// An idle storage period with charge, discharge, and the adjacent SoC
// variables all at bounds makes the SoC dynamics equality a linear
// combination of those bound rows; the period's SoC bound row is redundant
// (its constraint is implied and it has no demand dependence). Returns a
// 0/1 mask over inequality rows marking the redundant ones, given a 0/1
// activity mask.
inline std::vector<char> storage_redundant_rows(const ParametricQP& pqp,
                                                const std::vector<char>& is_active) {
  const int ni = pqp.n_in();
  const int T = pqp.horizon;
  const int k = static_cast<int>(pqp.layout.device.size());
  std::vector<char> drop(ni, 0);
  for (int j = 0; j < k; ++j) {
    if (pqp.layout.device[j].charge < 0) continue;  // not storage
    std::vector<char> chg(T, 0), dis(T, 0), soc(T, 0);
    std::vector<int> soc_row(T, -1);
    for (int r = 0; r < ni; ++r) {
      if (!is_active[r] || pqp.in_tags[r].device != j) continue;
      const auto& tag = pqp.in_tags[r];
      switch (tag.kind) {
        case RowTag::Kind::charge_lo:
        case RowTag::Kind::charge_hi: chg[tag.period] = 1; break;
        case RowTag::Kind::discharge_lo:
        case RowTag::Kind::discharge_hi: dis[tag.period] = 1; break;
        case RowTag::Kind::soc_lo:
        case RowTag::Kind::soc_hi:
          soc[tag.period] = 1;
          soc_row[tag.period] = r;
          break;
        default: break;
      }
    }
    for (int t = 0; t < T; ++t) {
      const bool prev_pinned = t == 0 ? true : soc[t - 1] == 1;
      if (chg[t] && dis[t] && soc[t] && prev_pinned) drop[soc_row[t]] = 1;
    }
  }
  return drop;
}

}  // namespace lme::detail
