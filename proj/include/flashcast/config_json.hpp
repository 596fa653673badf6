#pragma once

#include <string>
#include <type_traits>

#include "json.hpp"
#include "flashcast/loss.hpp"
#include "flashcast/model.hpp"
#include "flashcast/optim.hpp"
#include "flashcast/preprocess.hpp"
#include "flashcast/synthetic.hpp"

namespace flashcast {

using Json = nlohmann::json;

// Conversions for every configuration block. Readers start from the defaults, override the
// keys present and reject keys they do not know; `where` prefixes error messages.
Json to_json(const ModelConfig& c);
Json to_json(const OptimConfig& c);
Json to_json(const LossConfig& c);
Json to_json(const SplitConfig& c);
Json to_json(const GridSpec& g);
Json to_json(const SyntheticConfig& c);

void from_json(const Json& j, ModelConfig& c, const std::string& where = "model");
void from_json(const Json& j, OptimConfig& c, const std::string& where = "optim");
void from_json(const Json& j, LossConfig& c, const std::string& where = "loss");
void from_json(const Json& j, SplitConfig& c, const std::string& where = "split");
void from_json(const Json& j, GridSpec& g, const std::string& where = "grid");
void from_json(const Json& j, SyntheticConfig& c, const std::string& where = "synthetic");

// Tracks which keys of an object were consumed so that leftovers can be rejected.
class StrictObject {
public:
    StrictObject(const Json& j, std::string where);

    template <typename V>
    void read(const char* key, V& out) {
        if (!j_.contains(key)) return;
        used_.push_back(key);
        if constexpr (std::is_unsigned_v<V> && !std::is_same_v<V, bool>) {
            if (!j_.at(key).is_number_unsigned()) throw ConfigError(where_ + "." + key + " must be a non-negative integer");
        }
        try {
            out = j_.at(key).template get<V>();
        } catch (const Json::exception& e) {
            throw ConfigError(where_ + "." + key + ": " + e.what());
        }
    }

    const Json* sub(const char* key);
    bool has(const char* key) const { return j_.contains(key); }
    const std::string& where() const { return where_; }
    void finish() const;

private:
    const Json& j_;
    std::string where_;
    std::vector<std::string> used_;
};

}  // namespace flashcast
