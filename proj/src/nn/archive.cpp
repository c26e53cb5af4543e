#include "rsic/nn/archive.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace rsic::nn {

namespace {

constexpr char kMagic[8] = {'R', 'S', 'I', 'C', 'T', 'N', 'S', '1'};

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw ArchiveError("truncated archive: " + path.string());
    return v;
}

bool starts_with(const std::string& s, const std::string& prefix) { return s.compare(0, prefix.size(), prefix) == 0; }

}  // namespace

void save_archive(const std::filesystem::path& path, const TensorArchive& archive) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw ArchiveError("cannot open for writing: " + path.string());
    os.write(kMagic, sizeof(kMagic));
    put<std::uint64_t>(os, archive.size());
    for (const auto& [name, tensor] : archive) {
        put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put<std::uint32_t>(os, static_cast<std::uint32_t>(tensor.rank()));
        for (std::size_t d : tensor.shape()) put<std::uint64_t>(os, d);
        os.write(reinterpret_cast<const char*>(tensor.data()), static_cast<std::streamsize>(tensor.size() * sizeof(double)));
    }
    if (!os) throw ArchiveError("write failed: " + path.string());
}

TensorArchive load_archive(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ArchiveError("cannot open archive: " + path.string());
    char magic[8];
    if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw ArchiveError("not a tensor archive: " + path.string());
    }
    TensorArchive out;
    const auto count = get<std::uint64_t>(is, path);
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto name_len = get<std::uint32_t>(is, path);
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len)) throw ArchiveError("truncated archive: " + path.string());
        const auto rank = get<std::uint32_t>(is, path);
        Shape shape(rank);
        for (auto& d : shape) d = static_cast<std::size_t>(get<std::uint64_t>(is, path));
        Tensor t(shape);
        if (!is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)))) {
            throw ArchiveError("truncated archive: " + path.string());
        }
        out.emplace(std::move(name), std::move(t));
    }
    return out;
}

TensorArchive to_archive(const ParameterStore& params, const std::string& prefix) {
    TensorArchive out;
    for (const auto& [name, p] : params.items()) {
        if (starts_with(name, prefix)) out.emplace(name.substr(prefix.size()), p.value);
    }
    return out;
}

void load_into(ParameterStore& params, const TensorArchive& archive, const std::string& prefix) {
    std::vector<std::string> offenders;
    for (const auto& [name, p] : params.items()) {
        if (!starts_with(name, prefix)) continue;
        const std::string key = name.substr(prefix.size());
        auto it = archive.find(key);
        if (it == archive.end()) {
            offenders.push_back(key + " (missing)");
        } else if (it->second.shape() != p.value.shape()) {
            offenders.push_back(key + " (expected " + shape_string(p.value.shape()) + ", got " +
                                shape_string(it->second.shape()) + ")");
        }
    }
    for (const auto& [key, _] : archive) {
        if (!params.contains(prefix + key)) offenders.push_back(key + " (unexpected)");
    }
    if (!offenders.empty()) {
        std::string msg = "archive does not match model topology:";
        for (const auto& o : offenders) msg += " " + o + ";";
        throw ArchiveMismatch(msg, offenders);
    }
    for (auto& [name, p] : params.items()) {
        if (starts_with(name, prefix)) p.value = archive.at(name.substr(prefix.size()));
    }
}

}  // namespace rsic::nn
