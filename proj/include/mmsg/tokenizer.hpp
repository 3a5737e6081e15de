#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mmsg/synth.hpp"
#include "mmsg/vocab.hpp"

namespace mmsg {

// Closed-vocabulary tokenizer: one token per entity, predicate, phase and
// structural symbol, plus the fixed word set of the prompt serializers.
// Words tokenize whole (unknown words become <unk>), digits and punctuation
// tokenize per character.
class Tokenizer {
public:
    static Tokenizer build(const VocabSpec& v) {
        Tokenizer tk;
        auto add = [&](const std::string& s) {
            if (!tk.index_.count(s)) {
                tk.index_[s] = static_cast<int>(tk.tokens_.size());
                tk.tokens_.push_back(s);
            }
        };
        add("<pad>");
        add("<bos>");
        add("<eos>");
        add("<unk>");
        for (char c : std::string(";,|:=()[].-")) add(std::string(1, c));
        for (char c : std::string("0123456789")) add(std::string(1, c));
        for (const auto& e : v.entities()) add(e);
        for (const auto& p : v.predicates()) add(p);
        for (const auto& ph : synth::phase_labels()) add(ph);
        for (const char* w :
             {"memory", "none", "long", "recent", "speech", "robot", "tracker", "phase",
              "action", "predict", "t", "q", "graph", "scene",
              // transcript template words
              "team", "is", "getting", "ready", "let", "us", "set", "up", "the",
              "attaching", "arrays", "now", "mounting", "guide", "starting",
              "points", "beginning", "bone", "work", "bring",
              "implant", "tray", "close", "hand", "me", "run", "checks", "suture", "kit",
              "please", "wipe", "that", "table", "down", "x", "ray", "coming", "in", "mix",
              "cement", "scalpel", "hold", "this", "steady", "assist", "here", "adjust",
              "array", "checking", "station", "careful", "do", "not", "touch", "carry",
              "on"})
            add(w);
        return tk;
    }

    size_t size() const { return tokens_.size(); }
    int bos() const { return index_.at("<bos>"); }
    int eos() const { return index_.at("<eos>"); }
    int pad() const { return index_.at("<pad>"); }
    int unk() const { return index_.at("<unk>"); }
    int id(const std::string& tok) const {
        auto it = index_.find(tok);
        return it == index_.end() ? unk() : it->second;
    }
    const std::string& token(int id) const { return tokens_.at(static_cast<size_t>(id)); }

    std::vector<int> encode(std::string_view text) const {
        std::vector<int> ids;
        size_t i = 0;
        auto is_word_char = [](char c) {
            return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_';
        };
        while (i < text.size()) {
            char c = text[i];
            if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
                ++i;
                continue;
            }
            if (is_word_char(c)) {
                size_t j = i;
                while (j < text.size() && is_word_char(text[j])) ++j;
                std::string word(text.substr(i, j - i));
                ids.push_back(id(word));
                i = j;
                continue;
            }
            ids.push_back(id(std::string(1, c)));
            ++i;
        }
        return ids;
    }

    // Inverse adequate for triplet text: words glued to following punctuation,
    // a space after each ';' and between adjacent words.
    std::string decode(std::span<const int> ids) const {
        std::string out;
        bool prev_word = false;
        for (int tid : ids) {
            const std::string& tok = token(tid);
            if (tok == "<bos>" || tok == "<pad>") continue;
            if (tok == "<eos>") break;
            bool word = tok.size() > 1 || (tok[0] >= 'a' && tok[0] <= 'z') ||
                        (tok[0] >= '0' && tok[0] <= '9');
            bool digit_or_dot = tok.size() == 1 && ((tok[0] >= '0' && tok[0] <= '9') || tok[0] == '.');
            if (prev_word && word && !digit_or_dot) out += ' ';
            out += tok;
            if (tok == ";") out += ' ';
            prev_word = word;
        }
        return out;
    }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

}  // namespace mmsg
