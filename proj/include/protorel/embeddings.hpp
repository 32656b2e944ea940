#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "protorel/errors.hpp"

namespace protorel {

// Word-embedding table in the GloVe text convention: one record per line,
// "label v1 v2 ... vd". Labels cannot contain whitespace; multi-word class
// labels are resolved by averaging their tokens (see lookup()).
class WordEmbeddingTable {
  public:
    WordEmbeddingTable() = default;
    explicit WordEmbeddingTable(std::int64_t dim) : dim_(dim) {}

    std::int64_t dim() const { return dim_; }
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }

    void insert(const std::string& label, std::vector<double> vec) {
        if (static_cast<std::int64_t>(vec.size()) != dim_)
            throw FormatError("embedding for '" + label + "' has dimension " +
                              std::to_string(vec.size()) + ", expected " + std::to_string(dim_));
        if (index_.count(label))
            throw FormatError("duplicate embedding label '" + label + "'");
        index_.emplace(label, entries_.size());
        entries_.emplace_back(label, std::move(vec));
    }

    bool contains(const std::string& label) const { return index_.count(label) > 0; }

    const std::vector<double>& at(const std::string& label) const {
        auto it = index_.find(label);
        if (it == index_.end()) throw LookupError("no embedding for label '" + label + "'");
        return entries_[it->second].second;
    }

    // Exact match first; otherwise a whitespace-separated label resolves to
    // the mean of its token vectors.
    std::vector<double> lookup(const std::string& label) const {
        auto it = index_.find(label);
        if (it != index_.end()) return entries_[it->second].second;
        std::istringstream ss(label);
        std::string tok;
        std::vector<double> acc(static_cast<std::size_t>(dim_), 0.0);
        std::int64_t count = 0;
        while (ss >> tok) {
            auto jt = index_.find(tok);
            if (jt == index_.end())
                throw LookupError("no embedding for label '" + label + "' (token '" + tok +
                                  "' missing)");
            const auto& v = entries_[jt->second].second;
            for (std::size_t i = 0; i < v.size(); ++i) acc[i] += v[i];
            ++count;
        }
        if (count == 0) throw LookupError("no embedding for empty label");
        for (auto& x : acc) x /= static_cast<double>(count);
        return acc;
    }

    const std::vector<std::pair<std::string, std::vector<double>>>& entries() const {
        return entries_;
    }

  private:
    std::int64_t dim_ = 0;
    std::vector<std::pair<std::string, std::vector<double>>> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

inline WordEmbeddingTable load_embeddings(const std::string& path, std::int64_t expected_dim) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open embedding file '" + path + "'");
    WordEmbeddingTable table(expected_dim);
    std::string line;
    std::int64_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::size_t sp = line.find_first_of(" \t");
        if (sp == std::string::npos)
            throw FormatError("embedding line " + std::to_string(line_no) + ": no vector data");
        const std::string label = line.substr(0, sp);
        std::vector<double> vec;
        vec.reserve(static_cast<std::size_t>(expected_dim));
        const char* p = line.c_str() + sp;
        char* end = nullptr;
        while (true) {
            const double v = std::strtod(p, &end);
            if (end == p) break;
            vec.push_back(v);
            p = end;
        }
        while (*p == ' ' || *p == '\t') ++p;
        if (*p != '\0')
            throw FormatError("embedding line " + std::to_string(line_no) +
                              ": trailing garbage '" + std::string(p) + "'");
        if (static_cast<std::int64_t>(vec.size()) != expected_dim)
            throw FormatError("embedding line " + std::to_string(line_no) + ": got " +
                              std::to_string(vec.size()) + " values, expected " +
                              std::to_string(expected_dim));
        try {
            table.insert(label, std::move(vec));
        } catch (const FormatError& e) {
            throw FormatError("embedding line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return table;
}

inline void save_embeddings(const WordEmbeddingTable& table, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write embedding file '" + path + "'");
    char buf[32];
    for (const auto& [label, vec] : table.entries()) {
        out << label;
        for (double v : vec) {
            std::snprintf(buf, sizeof(buf), "%.17g", v);
            out << ' ' << buf;
        }
        out << '\n';
    }
    if (!out) throw IoError("write failed on '" + path + "'");
}

}  // namespace protorel
