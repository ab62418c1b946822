#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "ndlc/datagen.hpp"
#include "ndlc/diagnostics.hpp"
#include "ndlc/forecast.hpp"
#include "ndlc/model.hpp"
#include "ndlc/sampler.hpp"

namespace ndlc {

namespace fs = std::filesystem;

// %.17g, so values round-trip exactly; NaN is written as NA.
std::string format_double(double v);
double parse_double(const std::string& s);

nlohmann::json spec_to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const nlohmann::json& j);
nlohmann::json params_to_json(const Parameters& p);
Parameters params_from_json(const nlohmann::json& j);
nlohmann::json latent_to_json(const LatentState& l);
LatentState latent_from_json(const nlohmann::json& j);

void write_text(const fs::path& path, const std::string& text);
std::string read_text(const fs::path& path);
void write_json(const fs::path& path, const nlohmann::json& j);
nlohmann::json read_json(const fs::path& path);

// Long CSV: person_id, occasion, item_id, value. Between-level items use
// occasion 0. Occasions and ids are 1-based.
std::string dataset_to_csv(const Dataset& data);
Dataset dataset_from_csv(const std::string& csv, const nlohmann::json& sidecar);
// Sidecar with dimensions, occasion times, dropout (1-based) and extras.
nlohmann::json dataset_sidecar(const Dataset& data, const ModelSpec& spec, const nlohmann::json& extra);

nlohmann::json truth_to_json(const GroundTruth& truth);
GroundTruth truth_from_json(const nlohmann::json& j);

// Per chain: draws_chain<c>.csv (iteration + one column per parameter),
// latent_chain<c>.csv and latent_between_chain<c>.csv.
void write_draws(const PosteriorDraws& draws, const fs::path& dir);
PosteriorDraws read_draws(const fs::path& dir, const ModelSpec& spec, int n_chains);

std::string summary_to_csv(const std::vector<SummaryRow>& rows);

// person, factor, h, mean, var, lo, hi, p_state2
std::string forecast_to_csv(const ForecastResult& f);
// Inverse of forecast_to_csv; smoothed and filtered blocks stay empty.
ForecastResult forecast_from_csv(const std::string& csv, int n_persons, int n_factors, double level);
// person, occasion, factor, smoothed, p_state2_filtered
std::string smoothed_to_csv(const ForecastResult& f);

}  // namespace ndlc
