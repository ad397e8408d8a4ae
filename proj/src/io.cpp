#include "msc/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"

static_assert(std::endian::native == std::endian::little,
              "serialized weights/videos are little-endian");

namespace msc::io {

using ordered_json = nlohmann::ordered_json;

namespace {

void write_bytes(const fs::path& path, const void* data, std::size_t n) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw ConfigError("io: cannot open " + path.string() + " for writing");
    f.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!f) throw ConfigError("io: short write to " + path.string());
}

std::vector<char> read_bytes(const fs::path& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw ConfigError("io: cannot open " + path.string());
    const auto n = f.tellg();
    f.seekg(0);
    std::vector<char> buf(static_cast<std::size_t>(n));
    f.read(buf.data(), n);
    if (!f) throw ConfigError("io: short read from " + path.string());
    return buf;
}

}  // namespace

void save_checkpoint(const fs::path& dir, const std::vector<NamedTensor<float>>& tensors,
                     const std::string& manifest_name, const std::string& weights_name) {
    fs::create_directories(dir);
    ordered_json manifest = ordered_json::array();
    std::size_t total = 0;
    for (const auto& nt : tensors) {
        ordered_json e;
        e["name"] = nt.name;
        e["shape"] = nt.t.shape;
        e["dtype"] = "f32";
        manifest.push_back(e);
        total += nt.t.data.size();
    }
    write_text_file(dir / manifest_name, manifest.dump(2) + "\n");
    std::vector<float> flat;
    flat.reserve(total);
    for (const auto& nt : tensors) flat.insert(flat.end(), nt.t.data.begin(), nt.t.data.end());
    write_bytes(dir / weights_name, flat.data(), flat.size() * sizeof(float));
}

std::vector<NamedTensor<float>> load_checkpoint(const fs::path& dir,
                                                const std::string& manifest_name,
                                                const std::string& weights_name) {
    const auto manifest = ordered_json::parse(read_text_file(dir / manifest_name));
    const auto bytes = read_bytes(dir / weights_name);
    std::vector<NamedTensor<float>> out;
    std::size_t off = 0;
    for (const auto& e : manifest) {
        if (e.at("dtype").get<std::string>() != "f32")
            throw ConfigError("checkpoint: unsupported dtype");
        Shape sh = e.at("shape").get<Shape>();
        const auto n = static_cast<std::size_t>(shape_numel(sh));
        if (off + n * sizeof(float) > bytes.size())
            throw ConfigError("checkpoint: weights.bin shorter than manifest");
        std::vector<float> data(n);
        std::memcpy(data.data(), bytes.data() + off, n * sizeof(float));
        off += n * sizeof(float);
        out.push_back(NamedTensor<float>{e.at("name").get<std::string>(),
                                         Tensor<float>(std::move(sh), std::move(data))});
    }
    if (off != bytes.size()) throw ConfigError("checkpoint: trailing bytes in weights.bin");
    return out;
}

void save_video(const fs::path& dir, const Tensor<float>& video) {
    if (video.shape.size() != 5) throw ConfigError("save_video: expected [B,T,H,W,C]");
    fs::create_directories(dir);
    ordered_json manifest;
    manifest["shape"] = video.shape;
    manifest["dtype"] = "f32";
    write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
    write_bytes(dir / "frames.bin", video.data.data(), video.data.size() * sizeof(float));
}

Tensor<float> load_video(const fs::path& dir) {
    const auto manifest = ordered_json::parse(read_text_file(dir / "manifest.json"));
    if (manifest.at("dtype").get<std::string>() != "f32")
        throw ConfigError("load_video: unsupported dtype");
    Shape sh = manifest.at("shape").get<Shape>();
    const auto bytes = read_bytes(dir / "frames.bin");
    const auto n = static_cast<std::size_t>(shape_numel(sh));
    if (bytes.size() != n * sizeof(float))
        throw ConfigError("load_video: frames.bin size does not match manifest");
    std::vector<float> data(n);
    std::memcpy(data.data(), bytes.data(), bytes.size());
    return Tensor<float>(std::move(sh), std::move(data));
}

std::string pbm_string(const Mask& m) {
    std::string s = "P1\n" + std::to_string(m.cols) + " " + std::to_string(m.rows) + "\n";
    for (std::int64_t q = 0; q < m.rows; ++q) {
        for (std::int64_t k = 0; k < m.cols; ++k) {
            s += m.at(q, k) ? '1' : '0';
            s += (k + 1 < m.cols) ? ' ' : '\n';
        }
    }
    return s;
}

void write_pbm(const fs::path& path, const Mask& m) { write_text_file(path, pbm_string(m)); }

void write_pgm(const fs::path& path, const float* frame, std::int64_t h, std::int64_t w) {
    float lo = frame[0], hi = frame[0];
    for (std::int64_t i = 0; i < h * w; ++i) {
        lo = std::min(lo, frame[i]);
        hi = std::max(hi, frame[i]);
    }
    const float span = (hi > lo) ? (hi - lo) : 1.0f;
    std::string s = "P2\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    for (std::int64_t i = 0; i < h; ++i) {
        for (std::int64_t j = 0; j < w; ++j) {
            const int g = static_cast<int>(255.0f * (frame[i * w + j] - lo) / span);
            s += std::to_string(g);
            s += (j + 1 < w) ? ' ' : '\n';
        }
    }
    write_text_file(path, s);
}

void write_text_file(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw ConfigError("io: cannot open " + path.string() + " for writing");
    f << content;
    if (!f) throw ConfigError("io: short write to " + path.string());
}

std::string read_text_file(const fs::path& path) {
    const auto b = read_bytes(path);
    return std::string(b.begin(), b.end());
}

}  // namespace msc::io
