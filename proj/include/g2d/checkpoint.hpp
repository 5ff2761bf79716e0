#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "g2d/errors.hpp"
#include "g2d/param.hpp"

namespace g2d {

// Versioned plain-text checkpoint of a set of ParamGroups. Values are
// serialized as the raw 64-bit pattern of each double (16 hex digits), so a
// round trip is bit-exact by construction.
//
//   g2d-checkpoint v1
//   groups <count>
//   group <name> <role> <modality> <tensor-count>
//   tensor <rank> <extent...>
//   <hex word per value, space separated, one tensor per line>

namespace detail {

inline std::string double_to_hex(double v) {
    std::ostringstream os;
    os << std::hex << std::setfill('0') << std::setw(16) << std::bit_cast<std::uint64_t>(v);
    return os.str();
}

inline double hex_to_double(const std::string& s) {
    if (s.size() != 16) throw PipelineError("checkpoint: bad hex value '" + s + "'");
    std::uint64_t bits = 0;
    for (char c : s) {
        int d;
        if (c >= '0' && c <= '9') d = c - '0';
        else if (c >= 'a' && c <= 'f') d = c - 'a' + 10;
        else throw PipelineError("checkpoint: bad hex digit in '" + s + "'");
        bits = (bits << 4) | static_cast<std::uint64_t>(d);
    }
    return std::bit_cast<double>(bits);
}

inline Role role_from_name(const std::string& s) {
    if (s == "modality") return Role::Modality;
    if (s == "fusion") return Role::Fusion;
    if (s == "classifier") return Role::Classifier;
    if (s == "teacher") return Role::Teacher;
    throw PipelineError("checkpoint: unknown role '" + s + "'");
}

} // namespace detail

inline std::string serialize_checkpoint(const std::vector<const ParamGroup*>& groups) {
    std::ostringstream os;
    os << "g2d-checkpoint v1\n";
    os << "groups " << groups.size() << "\n";
    for (const ParamGroup* g : groups) {
        os << "group " << g->name() << " " << role_name(g->role()) << " " << g->modality()
           << " " << g->size() << "\n";
        for (const Tensor& t : g->tensors()) {
            os << "tensor " << t.rank();
            for (std::size_t d : t.shape) os << " " << d;
            os << "\n";
            for (std::size_t i = 0; i < t.numel(); ++i) {
                if (i) os << " ";
                os << detail::double_to_hex(t.data[i]);
            }
            os << "\n";
        }
    }
    return os.str();
}

inline std::vector<ParamGroup> parse_checkpoint(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != "g2d-checkpoint v1") {
        throw PipelineError("checkpoint: bad or missing header");
    }
    std::size_t ngroups = 0;
    {
        std::string kw;
        in >> kw >> ngroups;
        if (kw != "groups") throw PipelineError("checkpoint: expected 'groups' count");
    }
    std::vector<ParamGroup> groups;
    groups.reserve(ngroups);
    for (std::size_t gi = 0; gi < ngroups; ++gi) {
        std::string kw, name, role;
        int modality = -1;
        std::size_t ntensors = 0;
        in >> kw >> name >> role >> modality >> ntensors;
        if (kw != "group") throw PipelineError("checkpoint: expected 'group' record");
        ParamGroup group(name, detail::role_from_name(role), modality);
        for (std::size_t ti = 0; ti < ntensors; ++ti) {
            std::size_t rank = 0;
            in >> kw >> rank;
            if (kw != "tensor") throw PipelineError("checkpoint: expected 'tensor' record");
            std::vector<std::size_t> shape(rank);
            for (auto& d : shape) in >> d;
            Tensor t(shape);
            for (std::size_t i = 0; i < t.numel(); ++i) {
                std::string hex;
                in >> hex;
                t.data[i] = detail::hex_to_double(hex);
            }
            group.add(std::move(t));
        }
        if (!in) throw PipelineError("checkpoint: truncated file");
        groups.push_back(std::move(group));
    }
    return groups;
}

inline void save_checkpoint(const std::string& path, const std::vector<const ParamGroup*>& groups) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw PipelineError("checkpoint: cannot open '" + path + "' for writing");
    out << serialize_checkpoint(groups);
}

inline std::vector<ParamGroup> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw PipelineError("checkpoint: cannot open '" + path + "'");
    return parse_checkpoint(in);
}

// FNV-1a over the serialized form; used to content-address teacher caches.
inline std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : bytes) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string checkpoint_hash(const std::vector<const ParamGroup*>& groups) {
    std::ostringstream os;
    os << std::hex << std::setfill('0') << std::setw(16) << fnv1a(serialize_checkpoint(groups));
    return os.str();
}

} // namespace g2d
