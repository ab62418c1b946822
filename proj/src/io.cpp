#include "ndlc/io.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "ndlc/error.hpp"

namespace ndlc {

namespace {

using nlohmann::json;

json vec(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vector to_vec(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json state_vecs(const std::vector<Vector>& vs) {
  json out = json::array();
  for (const Vector& v : vs) out.push_back(vec(v));
  return out;
}

std::vector<Vector> to_state_vecs(const json& j) {
  std::vector<Vector> out;
  for (const auto& e : j) out.push_back(to_vec(e));
  return out;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    rows.push_back(split(line));
  }
  return rows;
}

int parse_int(const std::string& s) {
  char* end = nullptr;
  const long v = std::strtol(s.c_str(), &end, 10);
  if (end == s.c_str() || *end != '\0') throw DataError("malformed integer '" + s + "'");
  return static_cast<int>(v);
}

}  // namespace

std::string format_double(double v) {
  if (is_missing(v)) return "NA";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& s) {
  if (s == "NA" || s.empty()) return kMissing;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw DataError("malformed number '" + s + "'");
  return v;
}

json spec_to_json(const ModelSpec& spec) {
  json j;
  j["n_within_factors"] = spec.n_within_factors;
  j["items_per_factor"] = spec.items_per_factor;
  j["n_between_items"] = spec.n_between_items;
  j["n_states"] = spec.n_states;
  std::vector<int> inter;
  for (int f : spec.interaction_factors) inter.push_back(f + 1);
  j["interaction_factors"] = inter;
  j["n_persons"] = spec.n_persons;
  j["n_occasions"] = spec.n_occasions;
  j["forecast_horizon"] = spec.forecast_horizon;
  return j;
}

ModelSpec spec_from_json(const json& j) {
  ModelSpec spec;
  spec.n_within_factors = j.value("n_within_factors", spec.n_within_factors);
  spec.items_per_factor = j.value("items_per_factor", spec.items_per_factor);
  spec.n_between_items = j.value("n_between_items", spec.n_between_items);
  spec.n_states = j.value("n_states", spec.n_states);
  if (j.contains("interaction_factors")) {
    spec.interaction_factors.clear();
    for (int f : j["interaction_factors"].get<std::vector<int>>()) spec.interaction_factors.push_back(f - 1);
  }
  spec.n_persons = j.value("n_persons", spec.n_persons);
  spec.n_occasions = j.value("n_occasions", spec.n_occasions);
  spec.forecast_horizon = j.value("forecast_horizon", spec.forecast_horizon);
  spec.validate();
  return spec;
}

json params_to_json(const Parameters& p) {
  json j;
  j["lambda_within"] = vec(p.lambda_within);
  j["lambda_between"] = vec(p.lambda_between);
  j["alpha_state"] = state_vecs(p.alpha_state);
  j["b2_state"] = state_vecs(p.b2_state);
  j["b1_state"] = state_vecs(p.b1_state);
  j["omega2_state"] = state_vecs(p.omega2_state);
  j["gamma1"] = p.gamma1;
  j["gamma2"] = p.gamma2;
  j["gamma3"] = vec(p.gamma3);
  j["gamma4"] = vec(p.gamma4);
  j["var_zeta1"] = vec(p.var_zeta1);
  j["var_zeta2"] = vec(p.var_zeta2);
  j["var_zeta3"] = p.var_zeta3;
  j["var_eps1"] = vec(p.var_eps1);
  j["var_eps2"] = vec(p.var_eps2);
  j["p12"] = p.p12;
  return j;
}

Parameters params_from_json(const json& j) {
  Parameters p;
  p.lambda_within = to_vec(j.at("lambda_within"));
  p.lambda_between = to_vec(j.at("lambda_between"));
  p.alpha_state = to_state_vecs(j.at("alpha_state"));
  p.b2_state = to_state_vecs(j.at("b2_state"));
  p.b1_state = to_state_vecs(j.at("b1_state"));
  p.omega2_state = to_state_vecs(j.at("omega2_state"));
  p.gamma1 = j.at("gamma1").get<double>();
  p.gamma2 = j.at("gamma2").get<double>();
  p.gamma3 = to_vec(j.at("gamma3"));
  p.gamma4 = to_vec(j.at("gamma4"));
  p.var_zeta1 = to_vec(j.at("var_zeta1"));
  p.var_zeta2 = to_vec(j.at("var_zeta2"));
  p.var_zeta3 = j.at("var_zeta3").get<double>();
  p.var_eps1 = to_vec(j.at("var_eps1"));
  p.var_eps2 = to_vec(j.at("var_eps2"));
  p.p12 = j.at("p12").get<double>();
  return p;
}

json latent_to_json(const LatentState& l) {
  json j;
  j["n_persons"] = l.n_persons;
  j["n_occasions"] = l.n_occasions;
  j["n_factors"] = l.n_factors;
  j["eta1"] = l.eta1;
  j["eta2"] = vec(l.eta2);
  j["zeta2"] = std::vector<double>(l.zeta2.data(), l.zeta2.data() + l.zeta2.size());
  j["states"] = l.states;
  return j;
}

LatentState latent_from_json(const json& j) {
  LatentState l(j.at("n_persons").get<int>(), j.at("n_occasions").get<int>(), j.at("n_factors").get<int>());
  l.eta1 = j.at("eta1").get<std::vector<double>>();
  l.eta2 = to_vec(j.at("eta2"));
  const auto z = j.at("zeta2").get<std::vector<double>>();
  l.zeta2 = Eigen::Map<const Matrix>(z.data(), l.n_persons, l.n_factors);
  l.states = j.at("states").get<std::vector<int>>();
  if (l.eta1.size() != static_cast<std::size_t>(l.n_persons) * l.n_occasions * l.n_factors ||
      l.states.size() != static_cast<std::size_t>(l.n_persons) * l.n_occasions) {
    throw DataError("latent state arrays have the wrong length");
  }
  return l;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw DataError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

std::string dataset_to_csv(const Dataset& data) {
  std::string out = "person_id,occasion,item_id,value\n";
  for (int i = 0; i < data.n_persons; ++i) {
    for (int k = 0; k < data.n_between_items; ++k) {
      out += std::to_string(i + 1) + ",0," + std::to_string(k + 1) + "," + format_double(data.between(i, k)) + "\n";
    }
    for (int t = 0; t < data.n_occasions; ++t) {
      for (int k = 0; k < data.n_items; ++k) {
        out += std::to_string(i + 1) + "," + std::to_string(t + 1) + "," + std::to_string(k + 1) + "," +
               format_double(data.y(i, t, k)) + "\n";
      }
    }
  }
  return out;
}

json dataset_sidecar(const Dataset& data, const ModelSpec& spec, const json& extra) {
  json j = extra.is_object() ? extra : json::object();
  j["spec"] = spec_to_json(spec);
  j["n_persons"] = data.n_persons;
  j["n_occasions"] = data.n_occasions;
  j["n_items"] = data.n_items;
  j["n_between_items"] = data.n_between_items;
  j["occasion_times"] = data.occasion_times;
  json drop = json::array();
  for (const auto& d : data.dropout) drop.push_back(d ? json(*d + 1) : json(nullptr));
  j["dropout"] = drop;
  return j;
}

Dataset dataset_from_csv(const std::string& csv, const json& sidecar) {
  Dataset data;
  try {
    data = Dataset(sidecar.at("n_persons").get<int>(), sidecar.at("n_occasions").get<int>(),
                   sidecar.at("n_items").get<int>(), sidecar.at("n_between_items").get<int>());
    if (sidecar.contains("occasion_times")) {
      data.occasion_times = sidecar["occasion_times"].get<std::vector<double>>();
    }
    if (sidecar.contains("dropout")) {
      const auto& drop = sidecar["dropout"];
      if (drop.size() != static_cast<std::size_t>(data.n_persons)) throw DataError("dropout list has the wrong length");
      for (int i = 0; i < data.n_persons; ++i) {
        if (!drop[i].is_null()) data.dropout[i] = drop[i].get<int>() - 1;
      }
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed dataset sidecar: ") + e.what());
  }
  for (const auto& row : parse_csv(csv)) {
    if (row.size() != 4) throw DataError("dataset CSV rows need 4 columns");
    const int i = parse_int(row[0]) - 1;
    const int t = parse_int(row[1]);
    const int k = parse_int(row[2]) - 1;
    const double v = parse_double(row[3]);
    if (i < 0 || i >= data.n_persons) throw DataError("person_id out of range");
    if (t == 0) {
      if (k < 0 || k >= data.n_between_items) throw DataError("between item_id out of range");
      data.between(i, k) = v;
    } else {
      if (t > data.n_occasions || k < 0 || k >= data.n_items) throw DataError("occasion or item_id out of range");
      data.y(i, t - 1, k) = v;
    }
  }
  data.validate();
  return data;
}

json truth_to_json(const GroundTruth& truth) {
  json j;
  j["params"] = params_to_json(truth.params);
  j["latent"] = latent_to_json(truth.latent);
  j["n_estimation_occasions"] = truth.n_estimation_occasions;
  j["n_holdout_occasions"] = truth.n_holdout_occasions;
  json drop = json::array();
  for (const auto& d : truth.dropout_full) drop.push_back(d ? json(*d + 1) : json(nullptr));
  j["dropout_full"] = drop;
  j["seed"] = truth.seed;
  return j;
}

GroundTruth truth_from_json(const json& j) {
  GroundTruth t;
  t.params = params_from_json(j.at("params"));
  t.latent = latent_from_json(j.at("latent"));
  t.n_estimation_occasions = j.at("n_estimation_occasions").get<int>();
  t.n_holdout_occasions = j.at("n_holdout_occasions").get<int>();
  for (const auto& d : j.at("dropout_full")) {
    t.dropout_full.push_back(d.is_null() ? std::nullopt : std::optional<int>(d.get<int>() - 1));
  }
  t.seed = j.at("seed").get<std::uint64_t>();
  return t;
}

void write_draws(const PosteriorDraws& draws, const fs::path& dir) {
  fs::create_directories(dir);
  for (int c = 0; c < draws.n_chains(); ++c) {
    const std::string suffix = std::to_string(c + 1) + ".csv";
    std::string out = "iteration";
    for (const auto& n : draws.names) out += "," + n;
    out += "\n";
    const Matrix& m = draws.chains[c];
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      out += std::to_string(draws.iterations[c][r]);
      for (Eigen::Index k = 0; k < m.cols(); ++k) out += "," + format_double(m(r, k));
      out += "\n";
    }
    write_text(dir / ("draws_chain" + suffix), out);

    std::string lat;
    std::string btw;
    for (std::size_t d = 0; d < draws.latent[c].size(); ++d) {
      const LatentState& l = draws.latent[c][d];
      const std::string it = std::to_string(draws.latent_iterations[c][d]);
      if (d == 0) {
        lat = "iteration,person,occasion,state";
        btw = "iteration,person,eta2";
        for (int j = 0; j < l.n_factors; ++j) {
          lat += ",eta1_" + std::to_string(j + 1);
          btw += ",zeta2_" + std::to_string(j + 1);
        }
        lat += "\n";
        btw += "\n";
      }
      for (int i = 0; i < l.n_persons; ++i) {
        btw += it + "," + std::to_string(i + 1) + "," + format_double(l.eta2[i]);
        for (int j = 0; j < l.n_factors; ++j) btw += "," + format_double(l.zeta2(i, j));
        btw += "\n";
        for (int t = 0; t < l.n_occasions; ++t) {
          lat += it + "," + std::to_string(i + 1) + "," + std::to_string(t + 1) + "," +
                 std::to_string(l.state(i, t) + 1);
          for (int j = 0; j < l.n_factors; ++j) lat += "," + format_double(l.eta(i, t, j));
          lat += "\n";
        }
      }
    }
    write_text(dir / ("latent_chain" + suffix), lat);
    write_text(dir / ("latent_between_chain" + suffix), btw);
  }
}

PosteriorDraws read_draws(const fs::path& dir, const ModelSpec& spec, int n_chains) {
  PosteriorDraws draws;
  draws.names = ParameterLayout(spec).names();
  const int P = draws.n_params();
  for (int c = 0; c < n_chains; ++c) {
    const std::string suffix = std::to_string(c + 1) + ".csv";
    const auto rows = parse_csv(read_text(dir / ("draws_chain" + suffix)));
    Matrix m(static_cast<Eigen::Index>(rows.size()), P);
    std::vector<int> its;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (static_cast<int>(rows[r].size()) != P + 1) throw DataError("draws CSV has the wrong column count");
      its.push_back(parse_int(rows[r][0]));
      for (int k = 0; k < P; ++k) m(static_cast<Eigen::Index>(r), k) = parse_double(rows[r][k + 1]);
    }
    draws.chains.push_back(std::move(m));
    draws.iterations.push_back(std::move(its));

    const int J = spec.n_within_factors;
    const auto lrows = parse_csv(read_text(dir / ("latent_chain" + suffix)));
    const auto brows = parse_csv(read_text(dir / ("latent_between_chain" + suffix)));
    std::vector<LatentState> lat;
    std::vector<int> lat_its;
    const int N = spec.n_persons;
    const int T = spec.n_occasions;
    const std::size_t per_draw = static_cast<std::size_t>(N) * T;
    if (lrows.size() % per_draw != 0 || brows.size() != lrows.size() / T) {
      throw DataError("latent CSV size does not match the model spec");
    }
    for (std::size_t d = 0; d < lrows.size() / per_draw; ++d) {
      LatentState l(N, T, J);
      for (std::size_t r = d * per_draw; r < (d + 1) * per_draw; ++r) {
        const auto& row = lrows[r];
        const int i = parse_int(row[1]) - 1;
        const int t = parse_int(row[2]) - 1;
        l.state(i, t) = parse_int(row[3]) - 1;
        for (int j = 0; j < J; ++j) l.eta(i, t, j) = parse_double(row[4 + j]);
      }
      for (std::size_t r = d * N; r < (d + 1) * N; ++r) {
        const auto& row = brows[r];
        const int i = parse_int(row[1]) - 1;
        l.eta2[i] = parse_double(row[2]);
        for (int j = 0; j < J; ++j) l.zeta2(i, j) = parse_double(row[3 + j]);
      }
      lat_its.push_back(parse_int(lrows[d * per_draw][0]));
      lat.push_back(std::move(l));
    }
    draws.latent.push_back(std::move(lat));
    draws.latent_iterations.push_back(std::move(lat_its));
    draws.acceptance.emplace_back();
  }
  return draws;
}

std::string summary_to_csv(const std::vector<SummaryRow>& rows) {
  std::string out = "parameter,Mean,SD,2.5%,97.5%,Rhat\n";
  for (const SummaryRow& r : rows) {
    out += r.name + "," + format_double(r.mean) + "," + format_double(r.sd) + "," + format_double(r.q025) + "," +
           format_double(r.q975) + "," + (r.rhat ? format_double(*r.rhat) : std::string("NA")) + "\n";
  }
  return out;
}

std::string forecast_to_csv(const ForecastResult& f) {
  std::string out = "person,factor,h,mean,var,lo,hi,p_state2\n";
  for (int i = 0; i < f.n_persons; ++i) {
    for (int j = 0; j < f.n_factors; ++j) {
      for (int h = 0; h < f.horizon; ++h) {
        const ForecastCell& c = f.cell(i, h, j);
        out += std::to_string(i + 1) + "," + std::to_string(j + 1) + "," + std::to_string(h + 1) + "," +
               format_double(c.mean) + "," + format_double(c.var) + "," + format_double(c.lo) + "," +
               format_double(c.hi) + "," + format_double(f.p_state2(i, h)) + "\n";
      }
    }
  }
  return out;
}

ForecastResult forecast_from_csv(const std::string& csv, int n_persons, int n_factors, double level) {
  const auto rows = parse_csv(csv);
  const std::size_t per_h = static_cast<std::size_t>(n_persons) * n_factors;
  if (per_h == 0 || rows.size() % per_h != 0) throw DataError("forecast CSV does not match the dimensions");
  ForecastResult f;
  f.n_persons = n_persons;
  f.n_factors = n_factors;
  f.horizon = static_cast<int>(rows.size() / per_h);
  f.level = level;
  f.cells.resize(rows.size());
  f.p_state2 = Matrix::Zero(n_persons, f.horizon);
  for (const auto& row : rows) {
    if (row.size() != 8) throw DataError("forecast CSV needs 8 columns");
    const int i = parse_int(row[0]) - 1;
    const int j = parse_int(row[1]) - 1;
    const int h = parse_int(row[2]) - 1;
    if (i < 0 || i >= n_persons || j < 0 || j >= n_factors || h < 0 || h >= f.horizon) {
      throw DataError("forecast CSV index out of range");
    }
    ForecastCell& c = f.cells[(static_cast<std::size_t>(i) * f.horizon + h) * n_factors + j];
    c = {parse_double(row[3]), parse_double(row[4]), parse_double(row[5]), parse_double(row[6])};
    f.p_state2(i, h) = parse_double(row[7]);
  }
  return f;
}

std::string smoothed_to_csv(const ForecastResult& f) {
  std::string out = "person,occasion,factor,smoothed,p_state2_filtered\n";
  for (int i = 0; i < f.n_persons; ++i) {
    for (int j = 0; j < f.n_factors; ++j) {
      for (int t = 0; t < f.n_occasions; ++t) {
        out += std::to_string(i + 1) + "," + std::to_string(t + 1) + "," + std::to_string(j + 1) + "," +
               format_double(f.smoothed_at(i, t, j)) + "," + format_double(f.filtered_p_state2(i, t)) + "\n";
      }
    }
  }
  return out;
}

}  // namespace ndlc
