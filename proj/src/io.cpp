#include "uqtse/io.hpp"

#include "uqtse/errors.hpp"

#include <json.hpp>

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <system_error>

namespace uqtse {

namespace fs = std::filesystem;

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string fnv1a_hex(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : bytes) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string file_hash(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot read " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return fnv1a_hex(buf.str());
}

void atomic_write(const fs::path& path, const std::function<void(std::ostream&)>& writer, bool binary) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    try {
        std::ofstream out(tmp, binary ? std::ios::binary : std::ios::out);
        if (!out) throw InputError("cannot open " + tmp.string() + " for writing");
        writer(out);
        out.flush();
        if (!out) throw InputError("write to " + tmp.string() + " failed");
    } catch (...) {
        std::error_code ec;
        fs::remove(tmp, ec);
        throw;
    }
    fs::rename(tmp, path);
}

namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(',', start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    return s;
}

// Header-indexed CSV reader. Required columns may appear in any order; extra
// columns are skipped.
class CsvReader {
public:
    CsvReader(const fs::path& path, std::vector<std::string> required) : path_(path), in_(path) {
        if (!in_) throw InputError("cannot open " + path.string());
        std::string header;
        if (!std::getline(in_, header)) throw InputError(path.string() + ": empty file, expected header");
        if (header.size() >= 3 && header.compare(0, 3, "\xEF\xBB\xBF") == 0) header.erase(0, 3);
        std::map<std::string, std::size_t, std::less<>> index;
        const auto cols = split_commas(header);
        for (std::size_t c = 0; c < cols.size(); ++c) index.emplace(std::string(trim(cols[c])), c);
        for (const auto& name : required) {
            const auto it = index.find(name);
            if (it == index.end())
                throw InputError(path.string() + ": header is missing column '" + name + "'");
            columns_.push_back(it->second);
        }
    }

    // Fills `values` with the required columns of the next data row.
    bool next(std::vector<double>& values) {
        while (std::getline(in_, line_)) {
            ++line_no_;
            const auto view = trim(line_);
            if (view.empty()) continue;
            const auto cells = split_commas(view);
            values.resize(columns_.size());
            for (std::size_t c = 0; c < columns_.size(); ++c) {
                if (columns_[c] >= cells.size()) fail("too few columns");
                const auto cell = trim(cells[columns_[c]]);
                const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), values[c]);
                if (res.ec != std::errc() || res.ptr != cell.data() + cell.size())
                    fail("cannot parse '" + std::string(cell) + "' as a number");
            }
            return true;
        }
        return false;
    }

    [[noreturn]] void fail(const std::string& what) const {
        throw InputError(path_.string() + ":" + std::to_string(line_no_ + 1) + ": " + what);
    }

private:
    fs::path path_;
    std::ifstream in_;
    std::vector<std::size_t> columns_;
    std::string line_;
    std::size_t line_no_ = 0; // data rows consumed; header is line 1
};

}  // namespace

void write_observations_csv(const fs::path& path, const ObservationSet& obs) {
    atomic_write(path, [&](std::ostream& out) {
        out << "x_m,t_s,rho_veh_per_m,u_m_per_s\n";
        for (const auto& r : obs.records())
            out << format_double(r.x) << ',' << format_double(r.t) << ',' << format_double(r.rho) << ','
                << format_double(r.u) << '\n';
    });
}

void write_collocation_csv(const fs::path& path, const CollocationSet& col) {
    atomic_write(path, [&](std::ostream& out) {
        out << "x_m,t_s\n";
        for (const auto& p : col.points()) out << format_double(p.x) << ',' << format_double(p.t) << '\n';
    });
}

std::size_t for_each_observation(const fs::path& path, const std::function<void(const ObservationRecord&)>& sink) {
    CsvReader reader(path, {"x_m", "t_s", "rho_veh_per_m", "u_m_per_s"});
    std::vector<double> v;
    std::size_t n = 0;
    while (reader.next(v)) {
        sink({v[0], v[1], v[2], v[3]});
        ++n;
    }
    return n;
}

std::size_t for_each_collocation(const fs::path& path, const std::function<void(const CollocationPoint&)>& sink) {
    CsvReader reader(path, {"x_m", "t_s"});
    std::vector<double> v;
    std::size_t n = 0;
    while (reader.next(v)) {
        sink({v[0], v[1]});
        ++n;
    }
    return n;
}

ObservationSet read_observations_csv(const fs::path& path, const SpaceTimeDomain& domain) {
    std::vector<ObservationRecord> records;
    for_each_observation(path, [&](const ObservationRecord& r) { records.push_back(r); });
    try {
        return ObservationSet(domain, std::move(records));
    } catch (const std::invalid_argument& e) {
        throw InputError(path.string() + ": " + e.what());
    }
}

CollocationSet read_collocation_csv(const fs::path& path, const SpaceTimeDomain& domain) {
    std::vector<CollocationPoint> points;
    for_each_collocation(path, [&](const CollocationPoint& p) { points.push_back(p); });
    try {
        return CollocationSet(domain, std::move(points));
    } catch (const std::invalid_argument& e) {
        throw InputError(path.string() + ": " + e.what());
    }
}

std::vector<TrajectoryRecord> read_trajectories_csv(const fs::path& path, const TrajectoryCsvOptions& options) {
    CsvReader reader(path, {"Vehicle_ID", "Frame_ID", "Local_Y", "v_Vel", "Lane_ID"});
    const double length_scale = options.feet_to_meters ? 0.3048 : 1.0;
    std::vector<TrajectoryRecord> out;
    std::vector<double> v;
    while (reader.next(v)) {
        out.push_back({static_cast<long>(v[0]), v[1] * options.frame_period, v[2] * length_scale,
                       v[3] * length_scale, static_cast<int>(v[4])});
    }
    return out;
}

FieldFile to_field_file(const Ensemble& ensemble) {
    FieldFile f{"solver", {}, ensemble.realizations, ensemble.lambdas};
    for (std::size_t r = 0; r < ensemble.size(); ++r) f.labels.push_back("realization_" + std::to_string(r));
    return f;
}

Ensemble to_ensemble(const FieldFile& file) {
    if (file.fields.empty()) throw InputError("field file holds no fields");
    return Ensemble{file.fields.front().grid(), file.fields, file.lambdas};
}

namespace {

constexpr const char* kFieldMagic = "UQTSE-FIELDS 1";

void write_doubles(std::ostream& out, std::span<const double> values) {
    static_assert(std::endian::native == std::endian::little, "field files are little-endian");
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(double)));
}

}  // namespace

void write_field_file(const fs::path& path, const FieldFile& file) {
    if (file.fields.empty()) throw std::invalid_argument("no fields to write");
    if (file.labels.size() != file.fields.size()) throw std::invalid_argument("one label per field required");
    if (!file.lambdas.empty() && file.lambdas.size() != file.fields.size())
        throw std::invalid_argument("lambdas must be empty or one per field");
    const Grid& grid = file.fields.front().grid();
    nlohmann::json meta;
    meta["estimator"] = file.estimator;
    meta["length_m"] = grid.domain().length();
    meta["horizon_s"] = grid.domain().horizon();
    meta["nx"] = grid.nx();
    meta["nt"] = grid.nt();
    meta["labels"] = file.labels;
    meta["lambdas"] = nlohmann::json::array();
    for (const auto& p : file.lambdas) meta["lambdas"].push_back({p.rho_max, p.u_max, p.tau});
    meta["layout"] = "per field: rho then u, float64 little-endian, level-major";
    for (const auto& f : file.fields)
        if (f.grid().nx() != grid.nx() || f.grid().nt() != grid.nt())
            throw std::invalid_argument("all fields must share one grid");

    atomic_write(path, [&](std::ostream& out) {
        out << kFieldMagic << '\n' << meta.dump() << '\n';
        for (const auto& f : file.fields) {
            write_doubles(out, f.rho());
            write_doubles(out, f.u());
        }
    }, true);
}

FieldFile read_field_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open " + path.string());
    std::string magic, meta_line;
    std::getline(in, magic);
    if (magic != kFieldMagic) throw InputError(path.string() + ": not a field file (bad magic)");
    std::getline(in, meta_line);
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(meta_line);
    } catch (const std::exception& e) {
        throw InputError(path.string() + ": bad metadata: " + e.what());
    }
    const Grid grid(SpaceTimeDomain(meta.at("length_m"), meta.at("horizon_s")), meta.at("nx"), meta.at("nt"));
    FieldFile file;
    file.estimator = meta.at("estimator");
    file.labels = meta.at("labels").get<std::vector<std::string>>();
    for (const auto& l : meta.at("lambdas")) file.lambdas.emplace_back(l.at(0), l.at(1), l.at(2));
    for (std::size_t f = 0; f < file.labels.size(); ++f) {
        std::vector<double> rho(grid.size()), u(grid.size());
        in.read(reinterpret_cast<char*>(rho.data()), static_cast<std::streamsize>(rho.size() * sizeof(double)));
        in.read(reinterpret_cast<char*>(u.data()), static_cast<std::streamsize>(u.size() * sizeof(double)));
        if (!in) throw InputError(path.string() + ": truncated field data");
        file.fields.emplace_back(grid, std::move(rho), std::move(u));
    }
    return file;
}

}  // namespace uqtse
