// SPDX-License-Identifier: Apache-2.0

#include "avse/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <memory>
#include <regex>

#include "avse/error.hpp"
#include "avse/io.hpp"

namespace avse {

MaskScore hit_fa(const BinaryMask& est, const BinaryMask& ref) {
  if (est.frames != ref.frames || est.bins != ref.bins || est.values.size() != ref.values.size())
    throw DimensionError("hit_fa: estimate " + std::to_string(est.frames) + "x" + std::to_string(est.bins) +
                         " vs reference " + std::to_string(ref.frames) + "x" + std::to_string(ref.bins));
  std::size_t ones = 0, zeros = 0, tp = 0, fp = 0, agree = 0;
  for (std::size_t i = 0; i < ref.values.size(); ++i) {
    const bool r = ref.values[i] != 0, e = est.values[i] != 0;
    if (r) {
      ++ones;
      tp += e;
    } else {
      ++zeros;
      fp += e;
    }
    agree += (r == e);
  }
  if (ones == 0) throw UndefinedDenominatorError("HIT undefined: reference mask has no speech-dominant bins");
  if (zeros == 0) throw UndefinedDenominatorError("FA undefined: reference mask has no noise-dominant bins");
  MaskScore s;
  s.hit = static_cast<double>(tp) / static_cast<double>(ones);
  s.fa = static_cast<double>(fp) / static_cast<double>(zeros);
  s.hit_minus_fa = s.hit - s.fa;
  s.accuracy = static_cast<double>(agree) / static_cast<double>(ref.values.size());
  return s;
}

std::vector<std::uint8_t> encode_msk(const BinaryMask& m) {
  ByteWriter w;
  w.bytes("MSK1");
  w.u32(static_cast<std::uint32_t>(m.frames));
  w.u32(static_cast<std::uint32_t>(m.bins));
  for (auto v : m.values) w.u8(v ? 1 : 0);
  return w.take();
}

BinaryMask decode_msk(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "msk");
  if (r.bytes(4) != "MSK1") throw FormatError("msk: bad magic");
  BinaryMask m;
  m.frames = r.u32();
  m.bins = r.u32();
  if (m.frames == 0 || m.bins == 0) throw FormatError("msk: empty mask");
  if (r.remaining() != m.frames * m.bins) throw FormatError("msk: payload size does not match header");
  m.values.resize(m.frames * m.bins);
  for (auto& v : m.values) {
    v = r.u8();
    if (v > 1) throw FormatError("msk: values must be 0 or 1");
  }
  return m;
}

EvalRow evaluate_item(const EvalInput& in) {
  if (in.clean.size() != in.noisy.size() || in.clean.size() != in.enhanced.size())
    throw DimensionError("evaluate: lengths differ (clean " + std::to_string(in.clean.size()) + ", noisy " +
                         std::to_string(in.noisy.size()) + ", enhanced " + std::to_string(in.enhanced.size()) + ")");
  EvalRow r;
  r.utt = in.utt;
  r.cond = in.cond;
  r.snr_db = in.snr_db;
  r.si_sdr_noisy = si_sdr_capped(in.clean.samples, in.noisy.samples);
  r.si_sdr_enh = si_sdr_capped(in.clean.samples, in.enhanced.samples);
  r.stoi_noisy = stoi(in.clean, in.noisy);
  r.stoi_enh = stoi(in.clean, in.enhanced);
  if (in.est_mask && in.ref_mask) r.mask = hit_fa(*in.est_mask, *in.ref_mask);
  return r;
}

EvalRow mean_row(const std::vector<EvalRow>& rows, const std::string& utt, const std::string& cond) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  EvalRow m;
  m.utt = utt;
  m.cond = cond;
  if (rows.empty()) {
    m.snr_db = m.si_sdr_noisy = m.si_sdr_enh = m.stoi_noisy = m.stoi_enh = nan;
    return m;
  }
  const double n = static_cast<double>(rows.size());
  MaskScore ms;
  std::size_t n_mask = 0, n_pesq = 0;
  double pesq = 0.0;
  for (const auto& r : rows) {
    m.snr_db += r.snr_db;
    m.si_sdr_noisy += r.si_sdr_noisy;
    m.si_sdr_enh += r.si_sdr_enh;
    m.stoi_noisy += r.stoi_noisy;
    m.stoi_enh += r.stoi_enh;
    if (r.mask) {
      ms.hit += r.mask->hit;
      ms.fa += r.mask->fa;
      ms.hit_minus_fa += r.mask->hit_minus_fa;
      ms.accuracy += r.mask->accuracy;
      ++n_mask;
    }
    if (r.pesq) {
      pesq += *r.pesq;
      ++n_pesq;
    }
  }
  m.snr_db /= n;
  m.si_sdr_noisy /= n;
  m.si_sdr_enh /= n;
  m.stoi_noisy /= n;
  m.stoi_enh /= n;
  if (n_mask) {
    const double k = static_cast<double>(n_mask);
    ms.hit /= k;
    ms.fa /= k;
    ms.hit_minus_fa /= k;
    ms.accuracy /= k;
    m.mask = ms;
  }
  if (n_pesq) m.pesq = pesq / static_cast<double>(n_pesq);
  return m;
}

EvalReport summarize(std::vector<EvalRow> rows, std::vector<EvalItemError> errors) {
  EvalReport rep;
  std::map<std::string, std::vector<EvalRow>> groups;
  for (const auto& r : rows) groups[r.cond].push_back(r);
  for (const auto& [cond, g] : groups) rep.per_condition.push_back(mean_row(g, "MEAN", cond));
  rep.overall = mean_row(rows, "ALL", "ALL");
  rep.rows = std::move(rows);
  rep.errors = std::move(errors);
  return rep;
}

std::string format_number(double v) {
  if (!std::isfinite(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

namespace {

void write_row(std::ostream& os, const EvalRow& r) {
  auto opt = [](const std::optional<MaskScore>& m, double MaskScore::*f) {
    return m ? format_number((*m).*f) : std::string();
  };
  os << r.utt << ',' << r.cond << ',' << format_number(r.snr_db) << ',' << format_number(r.si_sdr_noisy) << ','
     << format_number(r.si_sdr_enh) << ',' << format_number(r.stoi_noisy) << ',' << format_number(r.stoi_enh)
     << ',' << opt(r.mask, &MaskScore::hit) << ',' << opt(r.mask, &MaskScore::fa) << ','
     << opt(r.mask, &MaskScore::hit_minus_fa) << ',' << opt(r.mask, &MaskScore::accuracy) << ','
     << (r.pesq ? format_number(*r.pesq) : std::string()) << '\n';
}

}  // namespace

void write_report_csv(std::ostream& os, const EvalReport& r, bool with_summary) {
  os << "utt,cond,snr_db,si_sdr_noisy,si_sdr_enh,stoi_noisy,stoi_enh,hit,fa,hit_fa,acc,pesq\n";
  for (const auto& row : r.rows) write_row(os, row);
  if (!with_summary) return;
  for (const auto& row : r.per_condition) write_row(os, row);
  if (!r.rows.empty()) write_row(os, r.overall);
}

namespace {

std::string shell_quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) {
    if (c == '\'') q += "'\\''";
    else q += c;
  }
  return q + "'";
}

}  // namespace

std::optional<double> run_pesq_hook(const std::string& command, const std::string& ref_path,
                                    const std::string& deg_path) {
  const std::string cmd = command + " " + shell_quote(ref_path) + " " + shell_quote(deg_path);
  std::unique_ptr<FILE, int (*)(FILE*)> pipe(popen(cmd.c_str(), "r"), pclose);
  if (!pipe) return std::nullopt;
  std::string out;
  char buf[256];
  while (std::fgets(buf, sizeof buf, pipe.get())) out += buf;
  const int status = pclose(pipe.release());
  if (status != 0) return std::nullopt;
  static const std::regex number(R"([-+]?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?)");
  std::optional<double> last;
  for (auto it = std::sregex_iterator(out.begin(), out.end(), number); it != std::sregex_iterator(); ++it)
    last = std::stod(it->str());
  return last;
}

}  // namespace avse
