#include <cmath>
#include <cstdio>
#include <cstring>
#include <map>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "pamod/lp.hpp"

namespace pamod::lp {
namespace {

constexpr std::size_t kNameWidth = 8;

std::string sanitize(const std::string& tag) {
  std::string s;
  s.reserve(tag.size());
  for (char ch : tag) {
    const auto u = static_cast<unsigned char>(ch);
    s.push_back(u <= 32 || u >= 127 || ch == '#' ? '_' : ch);
  }
  if (s.empty()) s = "_";
  return s;
}

std::string base36(std::size_t v) {
  static const char* digits = "0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZ";
  std::string out;
  do {
    out.insert(out.begin(), digits[v % 36]);
    v /= 36;
  } while (v > 0);
  return out;
}

// Tags that fit and are unambiguous after sanitizing keep their name; all
// others become <head>#<base36 index>. Sanitized names never contain '#', so
// the two families cannot collide.
std::vector<std::string> assign_names(const std::vector<std::string>& tags, bool rows) {
  std::vector<std::string> clean(tags.size());
  std::unordered_map<std::string, int> count;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    clean[i] = sanitize(tags[i]);
    ++count[clean[i]];
  }
  std::vector<std::string> out(tags.size());
  for (std::size_t i = 0; i < tags.size(); ++i) {
    const std::string& c = clean[i];
    const bool reserved = rows && c == "COST";
    if (c.size() <= kNameWidth && count[c] == 1 && !reserved) {
      out[i] = c;
      continue;
    }
    const std::string suffix = "#" + base36(i);
    if (suffix.size() >= kNameWidth) {
      out[i] = suffix.substr(0, kNameWidth);  // unreachable below 36^7 entries
      continue;
    }
    out[i] = c.substr(0, kNameWidth - suffix.size()) + suffix;
  }
  return out;
}

// Widest %g rendering that fits the 12-character numeric field.
std::string fmt_number(double v) {
  char buf[64];
  for (int prec = 12; prec >= 1; --prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strlen(buf) <= 12) return buf;
  }
  std::snprintf(buf, sizeof buf, "%.5e", v);
  return buf;
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

// Field layout: columns 2-3, 5-12, 15-22, 25-36.
std::string data_line(const std::string& f1, const std::string& f2, const std::string& f3,
                      const std::string& f4) {
  std::string line = " " + pad(f1, 2) + " " + pad(f2, 8) + "  " + pad(f3, 8) + "  " + f4;
  while (!line.empty() && line.back() == ' ') line.pop_back();
  return line;
}

std::vector<std::string> split(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> out;
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

double parse_number(const std::string& s, int line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    if (s == "Infinity" || s == "inf" || s == "1e+30" || s == "Inf") return kInf;
    if (s == "-Infinity" || s == "-inf" || s == "-Inf") return -kInf;
    throw ParseError("bad number '" + s + "'", line);
  }
}

double clamp_inf(double v) {
  if (v >= 1e30) return kInf;
  if (v <= -1e30) return -kInf;
  return v;
}

}  // namespace

MpsNames mps_names(const LpProblem& p) {
  std::vector<std::string> rt, ct;
  for (int i = 0; i < p.num_rows(); ++i) rt.push_back(p.row_tag(i));
  for (int j = 0; j < p.num_cols(); ++j) ct.push_back(p.col_tag(j));
  return {assign_names(rt, true), assign_names(ct, false)};
}

std::string write_mps(const LpProblem& p) {
  const MpsNames names = mps_names(p);
  const auto entries = p.entries();
  std::ostringstream out;
  out << "NAME          PAMOD\n";
  out << "ROWS\n";
  out << " N  COST\n";
  for (int i = 0; i < p.num_rows(); ++i) {
    const char* s = p.sense(i) == Sense::Equal ? "E" : p.sense(i) == Sense::LessEqual ? "L" : "G";
    out << data_line(s, names.rows[i], "", "") << "\n";
  }
  out << "COLUMNS\n";
  std::size_t k = 0;
  for (int j = 0; j < p.num_cols(); ++j) {
    if (p.cost(j) != 0.0) out << data_line("", names.cols[j], "COST", fmt_number(p.cost(j))) << "\n";
    bool any = p.cost(j) != 0.0;
    for (; k < entries.size() && entries[k].col == j; ++k) {
      out << data_line("", names.cols[j], names.rows[entries[k].row], fmt_number(entries[k].value))
          << "\n";
      any = true;
    }
    // Keep empty columns visible so that the column set round-trips.
    if (!any) out << data_line("", names.cols[j], "COST", "0") << "\n";
  }
  out << "RHS\n";
  if (p.objective_offset() != 0.0)
    out << data_line("", "RHS", "COST", fmt_number(-p.objective_offset())) << "\n";
  for (int i = 0; i < p.num_rows(); ++i)
    if (p.rhs(i) != 0.0) out << data_line("", "RHS", names.rows[i], fmt_number(p.rhs(i))) << "\n";
  out << "BOUNDS\n";
  for (int j = 0; j < p.num_cols(); ++j) {
    const double lo = p.lower(j), up = p.upper(j);
    const std::string& n = names.cols[j];
    if (lo == up) {
      out << data_line("FX", "BND", n, fmt_number(lo)) << "\n";
      continue;
    }
    if (!std::isfinite(lo) && !std::isfinite(up)) {
      out << data_line("FR", "BND", n, "") << "\n";
      continue;
    }
    if (!std::isfinite(lo)) out << data_line("MI", "BND", n, "") << "\n";
    else if (lo != 0.0) out << data_line("LO", "BND", n, fmt_number(lo)) << "\n";
    if (std::isfinite(up)) out << data_line("UP", "BND", n, fmt_number(up)) << "\n";
  }
  out << "ENDATA\n";
  return out.str();
}

LpProblem read_mps(std::string_view text) {
  enum class Section { None, Name, Rows, Columns, Rhs, Bounds, End };
  Section sec = Section::None;
  LpProblem p;
  std::string objective;
  std::unordered_set<std::string> free_rows;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '*') continue;
    auto tok = split(line);
    if (tok.empty()) continue;
    if (line[0] != ' ' && line[0] != '\t') {
      const std::string& h = tok[0];
      if (h == "NAME") sec = Section::Name;
      else if (h == "ROWS") sec = Section::Rows;
      else if (h == "COLUMNS") sec = Section::Columns;
      else if (h == "RHS") sec = Section::Rhs;
      else if (h == "BOUNDS") sec = Section::Bounds;
      else if (h == "ENDATA") { sec = Section::End; break; }
      else if (h == "OBJSENSE") {
        std::string next;
        if (tok.size() > 1) next = tok[1];
        else if (std::getline(in, next)) { ++lineno; next = split(next).empty() ? "" : split(next)[0]; }
        if (next != "MIN" && next != "MINIMIZE")
          throw ParseError("only minimization is supported", lineno);
      } else {
        throw ParseError("unsupported section '" + h + "'", lineno);
      }
      continue;
    }
    switch (sec) {
      case Section::Rows: {
        if (tok.size() != 2) throw ParseError("ROWS entry needs a type and a name", lineno);
        const std::string& t = tok[0];
        if (t == "N") {
          if (objective.empty()) objective = tok[1];
          else free_rows.insert(tok[1]);
        } else if (t == "E") p.add_row(tok[1], Sense::Equal, 0.0);
        else if (t == "L") p.add_row(tok[1], Sense::LessEqual, 0.0);
        else if (t == "G") p.add_row(tok[1], Sense::GreaterEqual, 0.0);
        else throw ParseError("unknown row type '" + t + "'", lineno);
        break;
      }
      case Section::Columns: {
        if (tok.size() < 3 || tok.size() % 2 == 0)
          throw ParseError("COLUMNS entry needs name/value pairs", lineno);
        if (tok[1] == "'MARKER'") throw ParseError("integer markers are not supported", lineno);
        const std::string& c = tok[0];
        const int j = p.has_col(c) ? p.col_index(c) : p.add_variable(c, 0.0, kInf, 0.0);
        for (std::size_t k = 1; k + 1 < tok.size(); k += 2) {
          const double v = parse_number(tok[k + 1], lineno);
          if (tok[k] == objective) p.add_cost(j, v);
          else if (free_rows.count(tok[k])) continue;
          else if (p.has_row(tok[k])) p.add_coefficient(p.row_index(tok[k]), j, v);
          else throw ParseError("unknown row '" + tok[k] + "'", lineno);
        }
        break;
      }
      case Section::Rhs: {
        // The set name is optional in some writers; pairs start after it.
        const std::size_t start = tok.size() % 2 == 1 ? 1 : 0;
        for (std::size_t k = start; k + 1 < tok.size(); k += 2) {
          const double v = parse_number(tok[k + 1], lineno);
          if (tok[k] == objective) p.set_objective_offset(-v);
          else if (free_rows.count(tok[k])) continue;
          else if (p.has_row(tok[k])) p.set_rhs(p.row_index(tok[k]), v);
          else throw ParseError("unknown row '" + tok[k] + "'", lineno);
        }
        break;
      }
      case Section::Bounds: {
        if (tok.size() < 3) throw ParseError("BOUNDS entry too short", lineno);
        const std::string& t = tok[0];
        const std::string& c = tok[2];
        if (!p.has_col(c)) throw ParseError("unknown column '" + c + "'", lineno);
        const int j = p.col_index(c);
        double lo = p.lower(j), up = p.upper(j);
        const bool needs_value = t == "UP" || t == "LO" || t == "FX";
        if (needs_value && tok.size() < 4) throw ParseError("bound value missing", lineno);
        const double v = needs_value ? clamp_inf(parse_number(tok[3], lineno)) : 0.0;
        if (t == "UP") up = v;
        else if (t == "LO") lo = v;
        else if (t == "FX") lo = up = v;
        else if (t == "FR") { lo = -kInf; up = kInf; }
        else if (t == "MI") lo = -kInf;
        else if (t == "PL") up = kInf;
        else throw ParseError("unsupported bound type '" + t + "'", lineno);
        p.set_bounds(j, lo, up);
        break;
      }
      default:
        throw ParseError("data line outside a section", lineno);
    }
  }
  if (sec != Section::End) throw ParseError("missing ENDATA", lineno);
  return p;
}

std::string write_solution_file(const LpSolution& s, const LpProblem& p) {
  const MpsNames names = mps_names(p);
  std::ostringstream out;
  char buf[64];
  out << "# pamod solution\n";
  out << "STATUS " << to_string(s.status) << "\n";
  std::snprintf(buf, sizeof buf, "%.17g", s.objective);
  out << "OBJECTIVE " << buf << "\n";
  for (int j = 0; j < p.num_cols() && j < static_cast<int>(s.x.size()); ++j) {
    std::snprintf(buf, sizeof buf, "%.17g", s.x[j]);
    out << "COLUMN " << names.cols[j] << " " << buf;
    if (j < static_cast<int>(s.reduced_costs.size())) {
      std::snprintf(buf, sizeof buf, "%.17g", s.reduced_costs[j]);
      out << " " << buf;
    }
    out << "\n";
  }
  for (int i = 0; i < p.num_rows() && i < static_cast<int>(s.duals.size()); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", s.duals[i]);
    out << "ROW " << names.rows[i] << " " << buf << "\n";
  }
  return out.str();
}

LpSolution read_solution_file(std::string_view text, const LpProblem& p) {
  const MpsNames names = mps_names(p);
  std::unordered_map<std::string, int> col_of, row_of;
  for (int j = 0; j < p.num_cols(); ++j) col_of[names.cols[j]] = j;
  for (int i = 0; i < p.num_rows(); ++i) row_of[names.rows[i]] = i;

  LpSolution s;
  s.x.assign(p.num_cols(), 0.0);
  s.duals.assign(p.num_rows(), 0.0);
  s.reduced_costs.assign(p.num_cols(), 0.0);
  bool have_status = false, have_rc = false, have_obj = false;

  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos && (hash == 0 || line[hash - 1] == ' ' || line[hash - 1] == '\t'))
      line.erase(hash);
    auto tok = split(line);
    if (tok.empty()) continue;
    const std::string& kw = tok[0];
    if (kw == "STATUS") {
      if (tok.size() != 2) throw ParseError("STATUS takes one value", lineno);
      s.status = status_from_string(tok[1]);
      have_status = true;
    } else if (kw == "OBJECTIVE") {
      if (tok.size() != 2) throw ParseError("OBJECTIVE takes one value", lineno);
      s.objective = parse_number(tok[1], lineno);
      have_obj = true;
    } else if (kw == "COLUMN") {
      if (tok.size() != 3 && tok.size() != 4) throw ParseError("COLUMN takes name value [rc]", lineno);
      auto it = col_of.find(tok[1]);
      if (it == col_of.end()) throw ParseError("unknown column '" + tok[1] + "'", lineno);
      s.x[it->second] = parse_number(tok[2], lineno);
      if (tok.size() == 4) {
        s.reduced_costs[it->second] = parse_number(tok[3], lineno);
        have_rc = true;
      }
    } else if (kw == "ROW") {
      if (tok.size() != 3) throw ParseError("ROW takes name dual", lineno);
      auto it = row_of.find(tok[1]);
      if (it == row_of.end()) throw ParseError("unknown row '" + tok[1] + "'", lineno);
      s.duals[it->second] = parse_number(tok[2], lineno);
    } else {
      throw ParseError("unknown keyword '" + kw + "'", lineno);
    }
  }
  if (!have_status) throw ParseError("missing STATUS line", 0);
  if (!have_rc) {
    // Reduced costs are derivable from the duals when the writer omitted them.
    s.reduced_costs = p.costs();
    for (const auto& e : p.entries()) s.reduced_costs[e.col] -= e.value * s.duals[e.row];
  }
  if (!have_obj && s.optimal()) s.objective = p.evaluate(s.x);
  return s;
}

}  // namespace pamod::lp
