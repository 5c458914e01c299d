#pragma once

#include <string>
#include <variant>

#include <json.hpp>

#include "miv/dgp.hpp"
#include "miv/effects.hpp"
#include "miv/ident2.hpp"
#include "miv/identk.hpp"
#include "miv/mde.hpp"
#include "miv/moments.hpp"
#include "miv/montecarlo.hpp"

namespace miv {

using Json = nlohmann::json;

// ---- file plumbing ----
std::string read_text_file(const std::string& path);                  // IoError
void write_text_file(const std::string& path, const std::string& text);
Json parse_json(const std::string& text, const std::string& origin);  // SchemaError
Json load_json_file(const std::string& path);

// ---- synthetic-world specs: {"kind": "dgp_binary" | "dgp_mixture", ...} ----
Json to_json(const DgpSpec2& g);
Json to_json(const DgpSpecK& g);
std::variant<DgpSpec2, DgpSpecK> dgp_from_json(const Json& j);  // validated on load

// ---- cell-moment estimates: {"kind": "moments", ...} ----
Json to_json(const MomentEstimate& me);
MomentEstimate moments_from_json(const Json& j);

// ---- report payloads ----
Json to_json(const Diagnostics& d);
Json to_json(const DecompositionSet& s);
Json to_json(const MixDiagnostics& d);
Json to_json(const MixtureDecomposition& m);
Json to_json(const HeteroAlphaBeta& ab);
Json to_json(const FitResult& f);
Json to_json(const EffectsReport& e);
Json to_json(const EffectsTruth& e);
// omits wall time so identical runs serialize byte-identically
Json to_json(const MonteCarloSummary& s);

}  // namespace miv
