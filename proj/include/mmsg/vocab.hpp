#pragma once

#include <algorithm>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

namespace mmsg {

struct StructuralTokens {
    std::string start = "<bos>";
    std::string end = "<eos>";
    std::string separator = ";";
    std::string field_delimiter = ",";
};

// Closed OR vocabulary: 21 entity classes and 16 predicate classes, plus the
// structural tokens of the triplet grammar. Index<->name mapping is a
// bijection with stable ordering.
class VocabSpec {
public:
    VocabSpec() = default;

    VocabSpec(std::vector<std::string> entities, std::vector<std::string> predicates,
              StructuralTokens structural = {})
        : entities_(std::move(entities)),
          predicates_(std::move(predicates)),
          structural_(std::move(structural)) {
        rebuild_index();
    }

    static const VocabSpec& default_or() {
        static const VocabSpec v(
            {"anaesthetist", "anesthesia_equipment", "assistant_surgeon", "c_arm",
             "circulator", "drape", "drill", "hammer", "head_surgeon", "instrument",
             "instrument_table", "mako_robot", "monitor", "mps", "mps_station",
             "nurse", "operating_table", "patient", "saw", "student", "tracker"},
            {"assisting", "calibrating", "cementing", "cleaning", "close_to",
             "cutting", "drilling", "hammering", "holding", "lying_on",
             "manipulating", "preparing", "sawing", "scanning", "suturing",
             "touching"});
        return v;
    }

    const std::vector<std::string>& entities() const { return entities_; }
    const std::vector<std::string>& predicates() const { return predicates_; }
    const StructuralTokens& structural() const { return structural_; }

    bool has_entity(const std::string& name) const { return entity_idx_.count(name) > 0; }
    bool has_predicate(const std::string& name) const { return predicate_idx_.count(name) > 0; }

    int entity_index(const std::string& name) const {
        auto it = entity_idx_.find(name);
        return it == entity_idx_.end() ? -1 : it->second;
    }

    int predicate_index(const std::string& name) const {
        auto it = predicate_idx_.find(name);
        return it == predicate_idx_.end() ? -1 : it->second;
    }

    nlohmann::json to_json() const {
        return {{"version", kSchemaVersion},
                {"entities", entities_},
                {"predicates", predicates_},
                {"structural",
                 {{"start", structural_.start},
                  {"end", structural_.end},
                  {"separator", structural_.separator},
                  {"field_delimiter", structural_.field_delimiter}}}};
    }

    static VocabSpec from_json(const nlohmann::json& j) {
        if (!j.contains("version") || j.at("version").get<int>() != kSchemaVersion)
            throw std::runtime_error("vocabulary file: unsupported or missing version");
        StructuralTokens st;
        if (j.contains("structural")) {
            const auto& s = j.at("structural");
            st.start = s.value("start", st.start);
            st.end = s.value("end", st.end);
            st.separator = s.value("separator", st.separator);
            st.field_delimiter = s.value("field_delimiter", st.field_delimiter);
        }
        return VocabSpec(j.at("entities").get<std::vector<std::string>>(),
                         j.at("predicates").get<std::vector<std::string>>(), st);
    }

    static constexpr int kSchemaVersion = 1;

private:
    void rebuild_index() {
        entity_idx_.clear();
        predicate_idx_.clear();
        for (size_t i = 0; i < entities_.size(); ++i) {
            if (!entity_idx_.emplace(entities_[i], static_cast<int>(i)).second)
                throw std::invalid_argument("VocabSpec: duplicate entity " + entities_[i]);
        }
        for (size_t i = 0; i < predicates_.size(); ++i) {
            if (!predicate_idx_.emplace(predicates_[i], static_cast<int>(i)).second)
                throw std::invalid_argument("VocabSpec: duplicate predicate " + predicates_[i]);
        }
    }

    std::vector<std::string> entities_;
    std::vector<std::string> predicates_;
    StructuralTokens structural_;
    std::unordered_map<std::string, int> entity_idx_;
    std::unordered_map<std::string, int> predicate_idx_;
};

}  // namespace mmsg
