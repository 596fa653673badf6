#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "flashcast/grid.hpp"

namespace flashcast {

struct ChannelInfo {
    std::string name;
    std::string unit;
    bool operator==(const ChannelInfo&) const = default;
};

// Standard predictor order plus one unnamed slot for the ninth channel.
std::vector<ChannelInfo> default_channels();

struct MgridHeader {
    static constexpr const char* kMagic = "MGRID1";
    static constexpr int kVersion = 1;

    GridSpec grid;
    std::vector<ChannelInfo> channels;
    ChannelInfo target{"flash_density", "flashes km-2 yr-1"};
    std::vector<Date> dates;

    // float32 values per day: predictors, then target, then mask.
    std::size_t record_floats() const { return (channels.size() + 2) * grid.cells(); }
    std::size_t record_bytes() const { return record_floats() * sizeof(float); }
};

struct GridSample {
    Date date;
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> predictors;  // (C, H, W)
    std::vector<float> target;      // (H, W)
    std::vector<float> mask;        // (H, W), 0 or 1

    static GridSample zeros(Date date, std::size_t channels, std::size_t height, std::size_t width);

    std::size_t cells() const { return height * width; }
    float& predictor(std::size_t c, std::size_t row, std::size_t col) {
        return predictors[(c * height + row) * width + col];
    }
    float predictor(std::size_t c, std::size_t row, std::size_t col) const {
        return predictors[(c * height + row) * width + col];
    }
};

// Non-finite predictors or targets force the pixel's mask to 0 and are replaced by 0. Returns
// the number of pixels newly masked. Mask entries other than 0 and 1 are a data error.
std::size_t sanitize(GridSample& s);

// Streams days in header order.
class MgridWriter {
public:
    MgridWriter(const std::filesystem::path& path, MgridHeader header);
    MgridWriter(const MgridWriter&) = delete;
    MgridWriter& operator=(const MgridWriter&) = delete;

    // Sanitizes a copy of the sample before writing.
    void write(const GridSample& sample);
    void finish();
    std::size_t written() const { return written_; }

private:
    std::filesystem::path path_;
    MgridHeader header_;
    std::ofstream out_;
    std::size_t written_ = 0;
    bool finished_ = false;
};

void write_mgrid(const std::filesystem::path& path, const MgridHeader& header, const std::vector<GridSample>& samples);

std::string header_to_json(const MgridHeader& h);

// Parses and validates the header JSON. String offsets in errors refer to the container.
MgridHeader header_from_json(const std::string& json, const std::string& source);

// One open container with constant-time seeks to any day.
class MgridFile {
public:
    explicit MgridFile(const std::filesystem::path& path);

    const MgridHeader& header() const { return header_; }
    const std::filesystem::path& path() const { return path_; }
    std::size_t days() const { return header_.dates.size(); }
    GridSample read(std::size_t day) const;

private:
    std::filesystem::path path_;
    MgridHeader header_;
    std::uint64_t payload_offset_ = 0;
    mutable std::ifstream in_;
    mutable std::mutex mutex_;
};

struct AccessRecord {
    std::string file;
    Date date;
};

// Every payload read goes through here so that tests can prove which days were touched.
class AccessLog {
public:
    void record(const std::string& file, Date date);
    std::vector<AccessRecord> records() const;
    std::set<int> years() const;
    std::set<std::string> files() const;
    std::size_t size() const;
    void clear();

private:
    mutable std::mutex mutex_;
    std::vector<AccessRecord> records_;
};

// A single container or a directory of containers (typically one per year), indexed by date.
class Dataset {
public:
    static Dataset open(const std::filesystem::path& path, std::optional<GridSpec> expected_grid = std::nullopt);

    std::size_t size() const { return index_.size(); }
    bool empty() const { return index_.empty(); }
    const Date& date(std::size_t i) const;
    const std::vector<Date>& dates() const { return dates_; }
    std::optional<std::size_t> find(Date d) const;

    const GridSpec& grid() const { return grid_; }
    const std::vector<ChannelInfo>& channels() const { return channels_; }
    const ChannelInfo& target() const { return target_; }
    std::size_t height() const { return grid_.height(); }
    std::size_t width() const { return grid_.width(); }
    const std::vector<std::filesystem::path>& files() const { return paths_; }

    GridSample sample(std::size_t i) const;

    AccessLog& access_log() const { return *log_; }

private:
    struct Entry {
        std::size_t file;
        std::size_t day;
    };
    GridSpec grid_;
    std::vector<ChannelInfo> channels_;
    ChannelInfo target_;
    std::vector<std::shared_ptr<MgridFile>> files_;
    std::vector<std::filesystem::path> paths_;
    std::vector<Entry> index_;
    std::vector<Date> dates_;
    std::shared_ptr<AccessLog> log_ = std::make_shared<AccessLog>();
};

}  // namespace flashcast
