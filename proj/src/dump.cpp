#include "framescope/dump.hpp"

#include <fstream>
#include <vector>

#include <json.hpp>

#include "framescope/errors.hpp"
#include "framescope/records.hpp"

namespace framescope {

using nlohmann::json;

namespace {

json meta_to_json(const DumpMeta& meta) {
    return json{{"format_version", meta.format_version},
                {"model_id", meta.model_id},
                {"n", meta.n},
                {"l", meta.l},
                {"h", meta.h},
                {"dtype", meta.dtype},
                {"mask", meta.mask},
                {"prompt", meta.prompt},
                {"framing", meta.framing},
                {"layout", meta.layout}};
}

DumpMeta meta_from_json(const json& j) {
    DumpMeta meta;
    meta.format_version = j.at("format_version").get<int>();
    meta.model_id = j.value("model_id", "");
    meta.n = j.at("n").get<int>();
    meta.l = j.at("l").get<int>();
    meta.h = j.at("h").get<int>();
    meta.dtype = j.at("dtype").get<std::string>();
    meta.mask = j.value("mask", "causal");
    meta.prompt = j.value("prompt", "");
    meta.framing = j.value("framing", "");
    meta.layout = j.at("layout").get<TokenLayout>();
    return meta;
}

}  // namespace

void save_dump(const HeadAttentionStack& stack, const TokenLayout& layout, DumpMeta meta,
               const std::filesystem::path& dir) {
    const int n = stack.size();
    const int depth = stack.depth();
    const int heads = stack.heads();
    meta.n = n;
    meta.l = depth;
    meta.h = heads;
    meta.dtype = "f32";
    meta.layout = layout;

    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "meta.json");
        if (!out) throw DumpFormatError("cannot write " + (dir / "meta.json").string());
        out << meta_to_json(meta).dump(2) << '\n';
    }

    std::vector<float> buffer(static_cast<size_t>(heads) * n * n);
    for (int l = 0; l < depth; ++l) {
        size_t at = 0;
        for (int h = 0; h < heads; ++h) {
            const Eigen::MatrixXd& w = stack.layers[static_cast<size_t>(l)][static_cast<size_t>(h)];
            if (w.rows() != n || w.cols() != n) {
                throw DumpFormatError("layer " + std::to_string(l) + " head " + std::to_string(h) +
                                      " has inconsistent shape");
            }
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j < n; ++j) buffer[at++] = static_cast<float>(w(i, j));
            }
        }
        const std::filesystem::path path = dir / ("layer_" + std::to_string(l));
        std::ofstream out(path, std::ios::binary);
        if (!out) throw DumpFormatError("cannot write " + path.string());
        out.write(reinterpret_cast<const char*>(buffer.data()),
                  static_cast<std::streamsize>(buffer.size() * sizeof(float)));
    }
}

LoadedDump load_dump(const std::filesystem::path& dir) {
    std::ifstream meta_in(dir / "meta.json");
    if (!meta_in) {
        throw DumpFormatError("missing meta.json in " + dir.string());
    }
    json j;
    try {
        meta_in >> j;
    } catch (const json::exception& e) {
        throw DumpFormatError(std::string("bad meta.json: ") + e.what());
    }
    DumpMeta meta;
    try {
        meta = meta_from_json(j);
    } catch (const json::exception& e) {
        throw DumpFormatError(std::string("bad meta.json: ") + e.what());
    }
    if (meta.format_version != 1) {
        throw DumpFormatError("unsupported dump format version " +
                              std::to_string(meta.format_version));
    }
    if (meta.dtype != "f32") {
        throw DumpFormatError("unsupported dtype " + meta.dtype);
    }
    if (meta.mask != "causal") {
        throw DumpFormatError("unsupported mask descriptor " + meta.mask);
    }
    if (meta.n <= 0 || meta.l <= 0 || meta.h <= 0) {
        throw DumpFormatError("meta has non-positive dimensions");
    }
    try {
        meta.layout.validate(meta.n);
    } catch (const GeometryError& e) {
        throw DumpFormatError(std::string("layout does not fit n: ") + e.what());
    }

    const size_t expect = static_cast<size_t>(meta.h) * meta.n * meta.n;
    LoadedDump out;
    out.meta = meta;
    out.layout = meta.layout;
    out.stack.causal_mask = plain_causal_mask(meta.n);
    out.stack.layers.resize(static_cast<size_t>(meta.l));

    std::vector<float> buffer(expect);
    for (int l = 0; l < meta.l; ++l) {
        const std::filesystem::path path = dir / ("layer_" + std::to_string(l));
        std::ifstream in(path, std::ios::binary);
        if (!in) throw DumpFormatError("missing " + path.string());
        in.seekg(0, std::ios::end);
        const auto size = static_cast<size_t>(in.tellg());
        if (size != expect * sizeof(float)) {
            throw DumpFormatError(path.string() + " holds " + std::to_string(size) +
                                  " bytes, expected " + std::to_string(expect * sizeof(float)));
        }
        in.seekg(0);
        in.read(reinterpret_cast<char*>(buffer.data()), static_cast<std::streamsize>(size));
        size_t at = 0;
        for (int h = 0; h < meta.h; ++h) {
            Eigen::MatrixXd w(meta.n, meta.n);
            for (int i = 0; i < meta.n; ++i) {
                for (int jcol = 0; jcol < meta.n; ++jcol) {
                    w(i, jcol) = static_cast<double>(buffer[at++]);
                }
            }
            out.stack.layers[static_cast<size_t>(l)].push_back(std::move(w));
        }
    }
    return out;
}

}  // namespace framescope
