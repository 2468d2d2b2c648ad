#include "sectune/diffmask.hpp"

#include <algorithm>
#include <map>
#include <tuple>

namespace sectune {
namespace {

using Pair = std::pair<std::size_t, std::size_t>;
using Key = std::tuple<std::size_t, std::size_t, TokenId>;

class Aligner {
 public:
  Aligner(const TokenSeq& a, const TokenSeq& b) : a_(a), b_(b), n_(a.size()), m_(b.size()), len_((n_ + 1) * (m_ + 1), 0) {
    for (std::size_t i = n_; i-- > 0;) {
      for (std::size_t j = m_; j-- > 0;) {
        at(i, j) = a_[i] == b_[j] ? at(i + 1, j + 1) + 1 : std::max(at(i + 1, j), at(i, j + 1));
      }
    }
  }

  const std::vector<Pair>& best(std::size_t i, std::size_t j) {
    const std::size_t state = i * (m_ + 1) + j;
    if (auto it = memo_.find(state); it != memo_.end()) return it->second;
    std::vector<Pair> out;
    if (at(i, j) > 0) {
      const std::size_t want = at(i, j) - 1;
      std::vector<Pair> cands;
      Key best_key{};
      for (std::size_t p = i; p < n_; ++p) {
        for (std::size_t q = j; q < m_; ++q) {
          if (a_[p] != b_[q] || at(p + 1, q + 1) != want) continue;
          Key k = key(p, q);
          if (cands.empty() || k < best_key) {
            cands.assign(1, {p, q});
            best_key = k;
          } else if (k == best_key) {
            cands.emplace_back(p, q);
          }
        }
      }
      // Equal keys differ only in orientation: (p, q) versus (q, p).
      Pair chosen = cands.front();
      if (cands.size() > 1) {
        std::vector<Pair> c0 = best(cands[0].first + 1, cands[0].second + 1);
        std::vector<Pair> c1 = best(cands[1].first + 1, cands[1].second + 1);
        if (compare(c1, c0) < 0) chosen = cands[1];
      }
      out.push_back(chosen);
      const auto& rest = best(chosen.first + 1, chosen.second + 1);
      out.insert(out.end(), rest.begin(), rest.end());
    }
    return memo_.emplace(state, std::move(out)).first->second;
  }

 private:
  std::size_t& at(std::size_t i, std::size_t j) { return len_[i * (m_ + 1) + j]; }

  Key key(std::size_t p, std::size_t q) const { return {std::min(p, q), std::max(p, q), a_[p]}; }

  int compare(const std::vector<Pair>& x, const std::vector<Pair>& y) const {
    for (std::size_t k = 0; k < std::min(x.size(), y.size()); ++k) {
      Key kx = key(x[k].first, x[k].second);
      Key ky = key(y[k].first, y[k].second);
      if (kx != ky) return kx < ky ? -1 : 1;
    }
    return 0;
  }

  const TokenSeq& a_;
  const TokenSeq& b_;
  std::size_t n_, m_;
  std::vector<std::size_t> len_;
  std::map<std::size_t, std::vector<Pair>> memo_;
};

}  // namespace

std::vector<Pair> lcs_alignment(const TokenSeq& a, const TokenSeq& b) {
  Aligner aligner(a, b);
  return aligner.best(0, 0);
}

EditScript token_diff(const TokenSeq& a, const TokenSeq& b) {
  EditScript script;
  std::size_t i = 0;
  std::size_t j = 0;
  auto gap = [&](std::size_t ie, std::size_t je) {
    if (i == ie && j == je) return;
    EditKind kind = i == ie ? EditKind::kInsert : j == je ? EditKind::kDelete : EditKind::kReplace;
    script.ops.push_back({kind, i, ie, j, je});
  };
  for (auto [p, q] : lcs_alignment(a, b)) {
    gap(p, q);
    if (!script.ops.empty() && script.ops.back().kind == EditKind::kEqual && script.ops.back().a_end == p &&
        script.ops.back().b_end == q) {
      ++script.ops.back().a_end;
      ++script.ops.back().b_end;
    } else {
      script.ops.push_back({EditKind::kEqual, p, p + 1, q, q + 1});
    }
    i = p + 1;
    j = q + 1;
  }
  gap(a.size(), b.size());
  return script;
}

std::vector<Pair> EditScript::matches() const {
  std::vector<Pair> out;
  for (const auto& op : ops) {
    if (op.kind != EditKind::kEqual) continue;
    for (std::size_t k = 0; k < op.a_end - op.a_start; ++k) out.emplace_back(op.a_start + k, op.b_start + k);
  }
  return out;
}

std::size_t EditScript::common_length() const {
  std::size_t n = 0;
  for (const auto& op : ops) {
    if (op.kind == EditKind::kEqual) n += op.a_end - op.a_start;
  }
  return n;
}

TokenSeq apply_script(const EditScript& script, const TokenSeq& a, const TokenSeq& b) {
  TokenSeq out;
  for (const auto& op : script.ops) {
    switch (op.kind) {
      case EditKind::kEqual:
        out.insert(out.end(), a.begin() + static_cast<std::ptrdiff_t>(op.a_start), a.begin() + static_cast<std::ptrdiff_t>(op.a_end));
        break;
      case EditKind::kReplace:
      case EditKind::kInsert:
        out.insert(out.end(), b.begin() + static_cast<std::ptrdiff_t>(op.b_start), b.begin() + static_cast<std::ptrdiff_t>(op.b_end));
        break;
      case EditKind::kDelete:
        break;
    }
  }
  return out;
}

MaskPair build_masks(const TokenSeq& o_sec, const TokenSeq& o_vul) {
  MaskPair masks{MaskVec(o_sec.size(), 1), MaskVec(o_vul.size(), 1)};
  for (auto [i, j] : token_diff(o_sec, o_vul).matches()) {
    masks.sec[i] = 0;
    masks.vul[j] = 0;
  }
  return masks;
}

}  // namespace sectune
