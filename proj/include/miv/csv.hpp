#pragma once

#include <string>

#include "miv/data.hpp"

namespace miv {

// Dataset CSV schema: header row required; columns y,t,z,v mandatory,
// x_1..x_d, u, latent_tstar, latent_ustar optional.  Unrecognized headers
// are rejected except for the latent_ prefix, which is passed over.
Dataset read_csv(const std::string& path);
Dataset read_csv_text(const std::string& text, const std::string& origin = "<memory>");

void write_csv(const std::string& path, const Dataset& d, bool include_latent = false);
std::string write_csv_text(const Dataset& d, bool include_latent = false);

}  // namespace miv
