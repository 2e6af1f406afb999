#include "prunekit/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

static_assert(std::endian::native == std::endian::little,
              "model blobs are little-endian; big-endian hosts are unsupported");

namespace prunekit {

namespace {

struct TensorRef {
    std::string name;
    const Tensor* tensor;
};

std::vector<TensorRef> enumerate_tensors(const NetworkSpec& spec, const ModelParams& params) {
    std::vector<TensorRef> refs;
    for (const auto& l : spec.layers) {
        switch (l.kind) {
            case LayerKind::conv: {
                const auto& p = params.conv.at(l.id);
                refs.push_back({l.id + ".kernel", &p.kernel});
                refs.push_back({l.id + ".bias", &p.bias});
                break;
            }
            case LayerKind::fc: {
                const auto& p = params.fc.at(l.id);
                refs.push_back({l.id + ".weight", &p.weight});
                refs.push_back({l.id + ".bias", &p.bias});
                break;
            }
            case LayerKind::bn: {
                const auto& p = params.bn.at(l.id);
                refs.push_back({l.id + ".gamma", &p.gamma});
                refs.push_back({l.id + ".beta", &p.beta});
                refs.push_back({l.id + ".running_mean", &p.running_mean});
                refs.push_back({l.id + ".running_var", &p.running_var});
                break;
            }
            default:
                break;
        }
    }
    return refs;
}

void rename_over(const std::string& tmp, const std::string& path) {
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        std::remove(tmp.c_str());
        throw std::runtime_error("cannot rename " + tmp + " to " + path);
    }
}

}  // namespace

void write_file_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp);
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw std::runtime_error("short write to " + tmp);
    }
    rename_over(tmp, path);
}

void save_model(const std::string& prefix, const NetworkSpec& spec, const ModelParams& params,
                const nlohmann::json& meta) {
    const auto refs = enumerate_tensors(spec, params);

    nlohmann::ordered_json j;
    j["format"] = "prunekit-model-v1";
    j["spec"] = nlohmann::ordered_json::parse(spec_to_json(spec));
    j["meta"] = meta;
    j["tensors"] = nlohmann::ordered_json::array();
    long long offset = 0;  // in f32 elements
    std::string blob;
    for (const auto& ref : refs) {
        nlohmann::ordered_json jt;
        jt["name"] = ref.name;
        jt["shape"] = ref.tensor->shape;
        jt["offset"] = offset;
        jt["count"] = ref.tensor->numel();
        j["tensors"].push_back(jt);
        blob.append(reinterpret_cast<const char*>(ref.tensor->data.data()),
                    ref.tensor->data.size() * sizeof(float));
        offset += ref.tensor->numel();
    }

    write_file_atomic(prefix + ".bin", blob);
    write_file_atomic(prefix + ".json", j.dump(2));
}

LoadedModel load_model(const std::string& prefix) {
    std::ifstream jin(prefix + ".json");
    if (!jin) throw std::runtime_error("cannot open " + prefix + ".json");
    const auto j = nlohmann::json::parse(jin);
    if (j.value("format", "") != "prunekit-model-v1") {
        throw std::runtime_error(prefix + ".json: unknown model format");
    }

    LoadedModel m;
    m.spec = spec_from_json(j.at("spec").dump(), /*run_validate=*/!j.at("spec").at("layers").empty());
    m.meta = j.value("meta", nlohmann::json::object());

    std::ifstream bin(prefix + ".bin", std::ios::binary);
    if (!bin) throw std::runtime_error("cannot open " + prefix + ".bin");
    std::vector<char> blob((std::istreambuf_iterator<char>(bin)),
                           std::istreambuf_iterator<char>());

    long long total = 0;
    for (const auto& jt : j.at("tensors")) total += jt.at("count").get<long long>();
    if (blob.size() != static_cast<size_t>(total) * sizeof(float)) {
        throw std::runtime_error(prefix + ".bin: blob length does not match the manifest");
    }

    std::map<std::string, Tensor> loaded;
    std::vector<std::string> order;
    for (const auto& jt : j.at("tensors")) {
        const std::string name = jt.at("name").get<std::string>();
        const std::vector<int> shape = jt.at("shape").get<std::vector<int>>();
        const long long offset = jt.at("offset").get<long long>();
        const long long count = jt.at("count").get<long long>();
        Tensor t(shape);
        if (t.numel() != count) {
            throw std::runtime_error(name + ": manifest count does not match shape");
        }
        if ((offset + count) * static_cast<long long>(sizeof(float)) >
            static_cast<long long>(blob.size())) {
            throw std::runtime_error(name + ": manifest range exceeds blob");
        }
        std::memcpy(t.data.data(), blob.data() + offset * sizeof(float), count * sizeof(float));
        loaded[name] = std::move(t);
        order.push_back(name);
    }

    // Rebuild typed parameter structs in spec order and require an exact match
    // between the manifest and what the spec calls for.
    size_t cursor = 0;
    auto take = [&](const std::string& name) -> Tensor {
        if (cursor >= order.size() || order[cursor] != name) {
            throw std::runtime_error("manifest does not list expected tensor " + name);
        }
        ++cursor;
        return std::move(loaded.at(name));
    };
    for (const auto& l : m.spec.layers) {
        switch (l.kind) {
            case LayerKind::conv: {
                ConvParams p;
                p.kernel = take(l.id + ".kernel");
                p.bias = take(l.id + ".bias");
                p.stride = l.stride;
                p.padding = l.padding;
                m.params.conv[l.id] = std::move(p);
                break;
            }
            case LayerKind::fc: {
                FcParams p;
                p.weight = take(l.id + ".weight");
                p.bias = take(l.id + ".bias");
                m.params.fc[l.id] = std::move(p);
                break;
            }
            case LayerKind::bn: {
                BNParams p;
                p.gamma = take(l.id + ".gamma");
                p.beta = take(l.id + ".beta");
                p.running_mean = take(l.id + ".running_mean");
                p.running_var = take(l.id + ".running_var");
                m.params.bn[l.id] = std::move(p);
                break;
            }
            default:
                break;
        }
    }
    if (cursor != order.size()) {
        throw std::runtime_error("manifest lists tensors the spec does not call for");
    }
    return m;
}

}  // namespace prunekit
