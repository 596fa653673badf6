#include "flashcast/mgrid.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"
#include "flashcast/binary_io.hpp"

namespace flashcast {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<ChannelInfo> default_channels() {
    return {{"orography", "m"},      {"t2m", "K"},           {"d2m", "K"},
            {"z1000", "1e3 m2 s-2"}, {"w500", "Pa s-1"},     {"z500", "1e3 m2 s-2"},
            {"z300_700", "1e3 m2 s-2"}, {"cape", "J kg-1"}, {"extra", ""}};
}

GridSample GridSample::zeros(Date date, std::size_t channels, std::size_t height, std::size_t width) {
    GridSample s;
    s.date = date;
    s.channels = channels;
    s.height = height;
    s.width = width;
    s.predictors.assign(channels * height * width, 0.0f);
    s.target.assign(height * width, 0.0f);
    s.mask.assign(height * width, 1.0f);
    return s;
}

std::size_t sanitize(GridSample& s) {
    const std::size_t n = s.cells();
    if (s.predictors.size() != s.channels * n || s.target.size() != n || s.mask.size() != n) {
        throw DimensionError("cells", "sample " + s.date.str() + " arrays do not match its (C, H, W)");
    }
    std::size_t masked = 0;
    for (std::size_t p = 0; p < n; ++p) {
        if (s.mask[p] != 0.0f && s.mask[p] != 1.0f) {
            throw DataError("mask value " + std::to_string(s.mask[p]) + " is not 0 or 1 on " + s.date.str());
        }
        bool bad = !std::isfinite(s.target[p]);
        for (std::size_t c = 0; c < s.channels; ++c) bad = bad || !std::isfinite(s.predictors[c * n + p]);
        if (!bad) continue;
        if (!std::isfinite(s.target[p])) s.target[p] = 0.0f;
        for (std::size_t c = 0; c < s.channels; ++c) {
            if (!std::isfinite(s.predictors[c * n + p])) s.predictors[c * n + p] = 0.0f;
        }
        if (s.mask[p] != 0.0f) ++masked;
        s.mask[p] = 0.0f;
    }
    return masked;
}

std::string header_to_json(const MgridHeader& h) {
    json j;
    j["magic"] = MgridHeader::kMagic;
    j["version"] = MgridHeader::kVersion;
    j["grid"] = {{"lat_min", h.grid.lat_min},       {"lat_max", h.grid.lat_max},
                 {"lon_min", h.grid.lon_min},       {"lon_max", h.grid.lon_max},
                 {"resolution", h.grid.resolution}, {"height", h.grid.height()},
                 {"width", h.grid.width()}};
    j["channels"] = json::array();
    for (const auto& c : h.channels) j["channels"].push_back({{"name", c.name}, {"unit", c.unit}});
    j["target"] = {{"name", h.target.name}, {"unit", h.target.unit}};
    j["layout"] = "per-day float32 little-endian: predictors (C,H,W), target (H,W), mask (H,W)";
    j["dates"] = json::array();
    for (const auto& d : h.dates) j["dates"].push_back(d.str());
    return j.dump();
}

MgridHeader header_from_json(const std::string& text, const std::string& source) {
    const std::uint64_t at = 14;  // magic + length prefix
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw FormatError(source + ": header is not valid JSON (" + e.what() + ")", at);
    }
    try {
        if (j.at("magic").get<std::string>() != MgridHeader::kMagic) throw FormatError(source + ": header magic mismatch", at);
        if (j.at("version").get<int>() != MgridHeader::kVersion) {
            throw FormatError(source + ": unsupported version " + std::to_string(j.at("version").get<int>()), at);
        }
        MgridHeader h;
        const auto& g = j.at("grid");
        h.grid.lat_min = g.at("lat_min").get<double>();
        h.grid.lat_max = g.at("lat_max").get<double>();
        h.grid.lon_min = g.at("lon_min").get<double>();
        h.grid.lon_max = g.at("lon_max").get<double>();
        h.grid.resolution = g.at("resolution").get<double>();
        h.grid.validate();
        const auto height = g.at("height").get<std::size_t>();
        const auto width = g.at("width").get<std::size_t>();
        if (height != h.grid.height()) {
            throw DimensionError("height", source + ": header declares H=" + std::to_string(height) + " but the grid has " +
                                               std::to_string(h.grid.height()) + " rows");
        }
        if (width != h.grid.width()) {
            throw DimensionError("width", source + ": header declares W=" + std::to_string(width) + " but the grid has " +
                                              std::to_string(h.grid.width()) + " columns");
        }
        for (const auto& c : j.at("channels")) {
            h.channels.push_back({c.at("name").get<std::string>(), c.value("unit", std::string{})});
        }
        if (j.contains("target")) {
            h.target = {j["target"].at("name").get<std::string>(), j["target"].value("unit", std::string{})};
        }
        for (const auto& d : j.at("dates")) h.dates.push_back(Date::parse(d.get<std::string>()));
        for (std::size_t i = 1; i < h.dates.size(); ++i) {
            if (!(h.dates[i - 1] < h.dates[i])) {
                throw FormatError(source + ": dates not strictly increasing at " + h.dates[i].str(), at);
            }
        }
        return h;
    } catch (const json::exception& e) {
        throw FormatError(source + ": malformed header (" + e.what() + ")", at);
    }
}

MgridWriter::MgridWriter(const fs::path& path, MgridHeader header) : path_(path), header_(std::move(header)) {
    header_.grid.validate();
    for (std::size_t i = 1; i < header_.dates.size(); ++i) {
        if (!(header_.dates[i - 1] < header_.dates[i])) throw DataError("MGRID dates must be strictly increasing");
    }
    out_.open(path, std::ios::binary | std::ios::trunc);
    if (!out_) throw DataError("cannot open " + path.string() + " for writing");
    binary::write_frame_header(out_, MgridHeader::kMagic, header_to_json(header_));
}

void MgridWriter::write(const GridSample& sample) {
    if (finished_) throw DataError("MGRID writer already finished");
    if (written_ >= header_.dates.size()) throw DataError("more samples than header dates in " + path_.string());
    if (sample.date != header_.dates[written_]) {
        throw DataError("sample date " + sample.date.str() + " does not match header date " +
                        header_.dates[written_].str());
    }
    if (sample.channels != header_.channels.size()) {
        throw DimensionError("channels", "sample has " + std::to_string(sample.channels) + " channels, header " +
                                             std::to_string(header_.channels.size()));
    }
    if (sample.height != header_.grid.height()) throw DimensionError("height", "sample height does not match grid");
    if (sample.width != header_.grid.width()) throw DimensionError("width", "sample width does not match grid");
    GridSample clean = sample;
    sanitize(clean);
    binary::put_f32(out_, clean.predictors);
    binary::put_f32(out_, clean.target);
    binary::put_f32(out_, clean.mask);
    if (!out_) throw DataError("write failed on " + path_.string());
    ++written_;
}

void MgridWriter::finish() {
    if (finished_) return;
    if (written_ != header_.dates.size()) {
        throw DataError(path_.string() + ": wrote " + std::to_string(written_) + " of " +
                        std::to_string(header_.dates.size()) + " days");
    }
    out_.close();
    if (!out_) throw DataError("closing " + path_.string() + " failed");
    finished_ = true;
}

void write_mgrid(const fs::path& path, const MgridHeader& header, const std::vector<GridSample>& samples) {
    MgridWriter w(path, header);
    for (const auto& s : samples) w.write(s);
    w.finish();
}

MgridFile::MgridFile(const fs::path& path) : path_(path) {
    in_.open(path, std::ios::binary);
    if (!in_) throw DataError("cannot open dataset file " + path.string());
    const auto frame = binary::read_frame_header(in_, MgridHeader::kMagic, path.string());
    header_ = header_from_json(frame.header, path.string());
    payload_offset_ = frame.payload_offset;
    const std::uint64_t need = header_.dates.size() * header_.record_bytes();
    const std::uint64_t have = frame.file_size - payload_offset_;
    if (have < need) {
        const std::uint64_t full_days = header_.record_bytes() ? have / header_.record_bytes() : 0;
        throw FormatError(path.string() + ": truncated payload, " + std::to_string(full_days) + " of " +
                              std::to_string(header_.dates.size()) + " days present",
                          payload_offset_ + full_days * header_.record_bytes());
    }
    if (have > need) throw FormatError(path.string() + ": trailing bytes after last day", payload_offset_ + need);
}

GridSample MgridFile::read(std::size_t day) const {
    if (day >= days()) throw DataError("day index " + std::to_string(day) + " out of range in " + path_.string());
    const std::size_t h = header_.grid.height(), w = header_.grid.width(), c = header_.channels.size();
    GridSample s;
    s.date = header_.dates[day];
    s.channels = c;
    s.height = h;
    s.width = w;
    std::vector<unsigned char> raw(header_.record_bytes());
    const std::uint64_t offset = payload_offset_ + day * header_.record_bytes();
    {
        std::lock_guard lock(mutex_);
        in_.clear();
        in_.seekg(static_cast<std::streamoff>(offset));
        in_.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
        if (!in_) throw FormatError(path_.string() + ": short read for " + s.date.str(), offset);
    }
    const std::size_t n = h * w;
    s.predictors.resize(c * n);
    s.target.resize(n);
    s.mask.resize(n);
    binary::decode_f32(raw.data(), s.predictors);
    binary::decode_f32(raw.data() + c * n * 4, s.target);
    binary::decode_f32(raw.data() + (c + 1) * n * 4, s.mask);
    return s;
}

void AccessLog::record(const std::string& file, Date date) {
    std::lock_guard lock(mutex_);
    records_.push_back({file, date});
}

std::vector<AccessRecord> AccessLog::records() const {
    std::lock_guard lock(mutex_);
    return records_;
}

std::set<int> AccessLog::years() const {
    std::lock_guard lock(mutex_);
    std::set<int> out;
    for (const auto& r : records_) out.insert(r.date.year);
    return out;
}

std::set<std::string> AccessLog::files() const {
    std::lock_guard lock(mutex_);
    std::set<std::string> out;
    for (const auto& r : records_) out.insert(r.file);
    return out;
}

std::size_t AccessLog::size() const {
    std::lock_guard lock(mutex_);
    return records_.size();
}

void AccessLog::clear() {
    std::lock_guard lock(mutex_);
    records_.clear();
}

Dataset Dataset::open(const fs::path& path, std::optional<GridSpec> expected_grid) {
    if (!fs::exists(path)) throw DataError("dataset not found: " + path.string());
    Dataset ds;
    if (fs::is_directory(path)) {
        for (const auto& e : fs::directory_iterator(path)) {
            if (e.is_regular_file() && e.path().extension() == ".mgrid") ds.paths_.push_back(e.path());
        }
        std::sort(ds.paths_.begin(), ds.paths_.end());
        if (ds.paths_.empty()) throw DataError("no .mgrid files in " + path.string());
    } else {
        ds.paths_.push_back(path);
    }
    struct Keyed {
        Date date;
        Entry entry;
    };
    std::vector<Keyed> keyed;
    for (std::size_t f = 0; f < ds.paths_.size(); ++f) {
        auto file = std::make_shared<MgridFile>(ds.paths_[f]);
        const auto& h = file->header();
        if (f == 0) {
            ds.grid_ = h.grid;
            ds.channels_ = h.channels;
            ds.target_ = h.target;
        } else {
            if (!(h.grid == ds.grid_)) throw DataError(ds.paths_[f].string() + ": grid differs from " + ds.paths_[0].string());
            if (h.channels != ds.channels_) {
                throw DataError(ds.paths_[f].string() + ": channel list differs from " + ds.paths_[0].string());
            }
        }
        for (std::size_t d = 0; d < h.dates.size(); ++d) keyed.push_back({h.dates[d], {f, d}});
        ds.files_.push_back(std::move(file));
    }
    if (expected_grid) {
        if (ds.grid_.height() != expected_grid->height()) {
            throw DimensionError("height", "dataset has H=" + std::to_string(ds.grid_.height()) + ", expected " +
                                               std::to_string(expected_grid->height()));
        }
        if (ds.grid_.width() != expected_grid->width()) {
            throw DimensionError("width", "dataset has W=" + std::to_string(ds.grid_.width()) + ", expected " +
                                              std::to_string(expected_grid->width()));
        }
        if (!(ds.grid_ == *expected_grid)) throw DataError("dataset grid extent differs from the configured grid");
    }
    std::stable_sort(keyed.begin(), keyed.end(), [](const Keyed& a, const Keyed& b) { return a.date < b.date; });
    for (std::size_t i = 1; i < keyed.size(); ++i) {
        if (keyed[i].date == keyed[i - 1].date) throw DataError("duplicate date " + keyed[i].date.str() + " in dataset");
    }
    for (const auto& k : keyed) {
        ds.index_.push_back(k.entry);
        ds.dates_.push_back(k.date);
    }
    return ds;
}

const Date& Dataset::date(std::size_t i) const {
    if (i >= dates_.size()) throw DataError("sample index " + std::to_string(i) + " out of range");
    return dates_[i];
}

std::optional<std::size_t> Dataset::find(Date d) const {
    const auto it = std::lower_bound(dates_.begin(), dates_.end(), d);
    if (it == dates_.end() || *it != d) return std::nullopt;
    return static_cast<std::size_t>(it - dates_.begin());
}

GridSample Dataset::sample(std::size_t i) const {
    if (i >= index_.size()) {
        throw DataError("sample index " + std::to_string(i) + " out of range (" + std::to_string(index_.size()) + " days)");
    }
    const auto& e = index_[i];
    const auto& file = *files_[e.file];
    log_->record(file.path().string(), dates_[i]);
    return file.read(e.day);
}

}  // namespace flashcast
