#include "miv/csv.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

#include "miv/errors.hpp"

namespace miv {

namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
        if (i == line.size() || line[i] == ',') {
            std::string f = line.substr(start, i - start);
            if (!f.empty() && f.back() == '\r') f.pop_back();
            out.push_back(std::move(f));
            start = i + 1;
        }
    }
    return out;
}

double parse_double(const std::string& s, std::size_t lineno, const std::string& col) {
    double val;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), val);
    if (ec != std::errc() || p != s.data() + s.size())
        raise(errc::schema_error,
              "line " + std::to_string(lineno) + ": cannot parse '" + s + "' in column " + col);
    return val;
}

int parse_binary(const std::string& s, std::size_t lineno, const std::string& col) {
    if (s == "0") return 0;
    if (s == "1") return 1;
    raise(errc::schema_error,
          "line " + std::to_string(lineno) + ": column " + col + " must be 0 or 1, got '" + s + "'");
}

}  // namespace

Dataset read_csv_text(const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line))
        raise(errc::schema_error, origin + ": empty input, header required");

    auto headers = split_line(line);
    int col_y = -1, col_t = -1, col_z = -1, col_v = -1, col_u = -1;
    int col_lt = -1, col_lu = -1;
    std::vector<int> col_x;  // col_x[d] = column of x_{d+1}
    for (int c = 0; c < static_cast<int>(headers.size()); ++c) {
        const std::string& h = headers[static_cast<std::size_t>(c)];
        if (h == "y") col_y = c;
        else if (h == "t") col_t = c;
        else if (h == "z") col_z = c;
        else if (h == "v") col_v = c;
        else if (h == "u") col_u = c;
        else if (h == "latent_tstar") col_lt = c;
        else if (h == "latent_ustar") col_lu = c;
        else if (h.rfind("x_", 0) == 0) {
            int d = 0;
            auto [p, ec] = std::from_chars(h.data() + 2, h.data() + h.size(), d);
            if (ec != std::errc() || p != h.data() + h.size() || d < 1)
                raise(errc::schema_error, origin + ": bad covariate header '" + h + "'");
            if (d > static_cast<int>(col_x.size())) col_x.resize(static_cast<std::size_t>(d), -1);
            col_x[static_cast<std::size_t>(d - 1)] = c;
        } else if (h.rfind("latent_", 0) == 0) {
            // ignored side channel
        } else {
            raise(errc::schema_error, origin + ": unknown column '" + h + "'");
        }
    }
    for (auto [col, name] : {std::pair{col_y, "y"}, {col_t, "t"}, {col_z, "z"}, {col_v, "v"}})
        if (col < 0) raise(errc::schema_error, origin + ": missing required column '" + std::string(name) + "'");
    for (std::size_t d = 0; d < col_x.size(); ++d)
        if (col_x[d] < 0)
            raise(errc::schema_error, origin + ": covariate columns must be contiguous x_1..x_d");

    Dataset data(static_cast<int>(col_x.size()));
    if (col_u >= 0) data.u.clear();
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || (line.size() == 1 && line[0] == '\r')) continue;
        auto f = split_line(line);
        if (f.size() != headers.size())
            raise(errc::schema_error, origin + ": line " + std::to_string(lineno) + ": expected " +
                                          std::to_string(headers.size()) + " fields, got " +
                                          std::to_string(f.size()));
        Observation o;
        o.y = parse_double(f[static_cast<std::size_t>(col_y)], lineno, "y");
        o.t = static_cast<uint8_t>(parse_binary(f[static_cast<std::size_t>(col_t)], lineno, "t"));
        o.z = static_cast<uint8_t>(parse_binary(f[static_cast<std::size_t>(col_z)], lineno, "z"));
        o.v = static_cast<uint8_t>(parse_binary(f[static_cast<std::size_t>(col_v)], lineno, "v"));
        o.x.resize(col_x.size());
        for (std::size_t d = 0; d < col_x.size(); ++d)
            o.x[d] = parse_double(f[static_cast<std::size_t>(col_x[d])], lineno, "x_" + std::to_string(d + 1));
        if (col_u >= 0) {
            const std::string& s = f[static_cast<std::size_t>(col_u)];
            int uv = 0;
            auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), uv);
            if (ec != std::errc() || p != s.data() + s.size() || uv < 0)
                raise(errc::schema_error,
                      origin + ": line " + std::to_string(lineno) + ": column u must be a nonnegative integer");
            o.u = uv;
        }
        data.push_back(o);
        if (col_lt >= 0)
            data.latent_tstar.push_back(
                static_cast<uint8_t>(parse_binary(f[static_cast<std::size_t>(col_lt)], lineno, "latent_tstar")));
        if (col_lu >= 0) {
            const std::string& s = f[static_cast<std::size_t>(col_lu)];
            int uv = 0;
            auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), uv);
            if (ec != std::errc() || p != s.data() + s.size())
                raise(errc::schema_error, origin + ": line " + std::to_string(lineno) + ": bad latent_ustar");
            data.latent_ustar.push_back(uv);
        }
    }
    return data;
}

Dataset read_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(errc::io_error, "cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return read_csv_text(buf.str(), path);
}

std::string write_csv_text(const Dataset& d, bool include_latent) {
    include_latent = include_latent && d.has_latent();
    std::string out;
    out.reserve(d.size() * 24 + 64);
    out += "y,t,z,v";
    for (int k = 1; k <= d.xdim(); ++k) out += ",x_" + std::to_string(k);
    if (d.has_u()) out += ",u";
    if (include_latent) {
        out += ",latent_tstar";
        if (!d.latent_ustar.empty()) out += ",latent_ustar";
    }
    out += "\n";
    char buf[64];
    for (std::size_t i = 0; i < d.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g", d.y[i]);
        out += buf;
        out += ',';
        out += char('0' + d.t[i]);
        out += ',';
        out += char('0' + d.z[i]);
        out += ',';
        out += char('0' + d.v[i]);
        for (int k = 0; k < d.xdim(); ++k) {
            std::snprintf(buf, sizeof buf, ",%.17g", d.x_row(i)[k]);
            out += buf;
        }
        if (d.has_u()) {
            std::snprintf(buf, sizeof buf, ",%d", d.u[i]);
            out += buf;
        }
        if (include_latent) {
            out += ',';
            out += char('0' + d.latent_tstar[i]);
            if (!d.latent_ustar.empty()) {
                std::snprintf(buf, sizeof buf, ",%d", d.latent_ustar[i]);
                out += buf;
            }
        }
        out += '\n';
    }
    return out;
}

void write_csv(const std::string& path, const Dataset& d, bool include_latent) {
    std::ofstream out(path, std::ios::binary);
    if (!out) raise(errc::io_error, "cannot open " + path + " for writing");
    out << write_csv_text(d, include_latent);
    if (!out) raise(errc::io_error, "write failed: " + path);
}

}  // namespace miv
