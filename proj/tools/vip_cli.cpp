// Batch CLI over image directories: attention partitioning, CLS output
// decomposition, masked-attention CKA, one-shot probes, layerwise curves and
// attention-map rendering for a ViT checkpoint.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vip/decomposition.hpp"
#include "vip/errors.hpp"
#include "vip/ingestion.hpp"
#include "vip/metrics.hpp"
#include "vip/model.hpp"
#include "vip/reporting.hpp"

namespace fs = std::filesystem;
using namespace vip;

namespace {

struct RunConfig {
    std::string model_path;
    std::string config_path;
    std::string data_root;
    std::optional<std::size_t> limit;
    std::uint64_t seed = 0;
    std::string out = "report.json";
    std::string format = "json";
    std::optional<std::size_t> layer; // default: final layer
    bool mask_renormalize = false;
    bool with_checkpoints = false;
    std::size_t resize = 256;
    std::size_t crop = 224;
    std::size_t top_k = 5;
    std::size_t reps = 20;
};

struct LoadedImage {
    DatasetEntry entry;
    std::string content_hash;
    Tensor patches;
};

ReportFormat parse_format(const std::string& f) {
    if (f == "json") return ReportFormat::Json;
    if (f == "csv") return ReportFormat::Csv;
    throw std::invalid_argument("unknown report format '" + f + "'");
}

std::vector<LoadedImage> load_dataset(const RunConfig& rc, const ModelConfig& mc) {
    PreprocessOptions pp;
    pp.resize = rc.resize;
    pp.crop = rc.crop;
    std::vector<LoadedImage> out;
    for (const auto& entry : iterate_dataset(rc.data_root, rc.limit, rc.seed, rc.seed != 0)) {
        ImageSpec spec = decode_image(entry.path);
        LoadedImage li;
        li.entry = entry;
        li.content_hash = spec.content_hash;
        li.patches = preprocess(spec, mc, pp);
        out.push_back(std::move(li));
    }
    // Deterministic aggregation order, independent of listing order.
    std::sort(out.begin(), out.end(),
              [](const LoadedImage& a, const LoadedImage& b) {
                  return a.content_hash < b.content_hash;
              });
    return out;
}

AnalysisReport base_report(const RunConfig& rc, const ModelConfig& mc, const std::string& cmd) {
    AnalysisReport rep;
    rep.config_hash = mc.hash();
    rep.settings["command"] = cmd;
    rep.settings["model"] = rc.model_path;
    rep.settings["data"] = rc.data_root;
    rep.settings["seed"] = std::to_string(rc.seed);
    rep.settings["resize"] = std::to_string(rc.resize);
    rep.settings["crop"] = std::to_string(rc.crop);
    rep.settings["mask_renormalize"] = rc.mask_renormalize ? "true" : "false";
    rep.settings["with_checkpoints"] = rc.with_checkpoints ? "true" : "false";
    rep.settings["layer"] = rc.layer ? std::to_string(*rc.layer) : "final";
    return rep;
}

std::size_t resolve_layer(const RunConfig& rc, const ModelConfig& mc) {
    const std::size_t layer = rc.layer.value_or(mc.depth - 1);
    if (layer >= mc.depth)
        throw std::invalid_argument("--layer " + std::to_string(layer) +
                                    " out of range for depth " + std::to_string(mc.depth));
    return layer;
}

Tensor to_feature_matrix(const std::vector<Tensor>& rows) {
    const std::size_t n = rows.size(), d = rows.front().numel();
    Tensor m({n, d});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) m(i, j) = rows[i](j);
    return m;
}

void cmd_partition(const RunConfig& rc, const Model& model) {
    const std::size_t layer = resolve_layer(rc, model.config());
    AnalysisReport rep = base_report(rc, model.config(), "partition");
    for (const auto& img : load_dataset(rc, model.config())) {
        const ForwardTrace trace = model.forward(img.patches);
        const TokenLayout layout = model.layout_for(img.patches.extent(0));
        const AttentionPartition p = attention_partition(trace, layout, layer);
        ImageRecord rec;
        rec.image_hash = img.content_hash;
        rec.values["patch_share"] = p.patch_share;
        rec.values["register_share"] = p.register_share;
        rec.values["cls_self_share"] = p.cls_self_share;
        // two-way view: CLS-self folded into the register bucket
        rec.values["register_share_with_cls"] = p.register_share + p.cls_self_share;
        rep.records.push_back(std::move(rec));
    }
    emit_report(rep, parse_format(rc.format), rc.out);
}

void cmd_decompose(const RunConfig& rc, const Model& model) {
    const std::size_t layer = resolve_layer(rc, model.config());
    AnalysisReport rep = base_report(rc, model.config(), "decompose");
    for (const auto& img : load_dataset(rc, model.config())) {
        const ForwardTrace trace = model.forward(img.patches);
        const TokenLayout layout = model.layout_for(img.patches.extent(0));
        const ClsDecomposition d = decompose_cls(trace, layout, layer);
        const ContributionNorms n = contribution_norms(d);
        ImageRecord rec;
        rec.image_hash = img.content_hash;
        rec.values["patch_norm"] = n.patch_norm;
        rec.values["nonpatch_norm"] = n.nonpatch_norm;
        rec.values["skip_norm"] = n.skip_norm;
        rec.values["register_norm"] = l2_norm(d.register_contrib);
        rec.values["cls_self_norm"] = l2_norm(d.cls_self_contrib);
        rec.values["attn_total_norm"] = l2_norm(d.attn_total);
        rec.values["patch_total_cosine"] = patch_total_cosine(d);
        rec.values["patch_full_cosine"] = cosine(d.patch_contrib, d.full_out);
        rep.records.push_back(std::move(rec));
    }
    emit_report(rep, parse_format(rc.format), rc.out);
}

void cmd_norms(const RunConfig& rc, const Model& model) {
    const std::size_t layer = resolve_layer(rc, model.config());
    AnalysisReport rep = base_report(rc, model.config(), "norms");
    for (const auto& img : load_dataset(rc, model.config())) {
        const ForwardTrace trace = model.forward(img.patches);
        const TokenLayout layout = model.layout_for(img.patches.extent(0));
        const ContributionNorms n = contribution_norms(decompose_cls(trace, layout, layer));
        ImageRecord rec;
        rec.image_hash = img.content_hash;
        rec.values["patch_norm"] = n.patch_norm;
        rec.values["nonpatch_norm"] = n.nonpatch_norm;
        rec.values["skip_norm"] = n.skip_norm;
        rec.values["skip_to_patch_ratio"] = n.patch_norm > 0.0 ? n.skip_norm / n.patch_norm : 0.0;
        rep.records.push_back(std::move(rec));
    }
    emit_report(rep, parse_format(rc.format), rc.out);
}

// Per-image feature variants for CKA: unmasked CLS embedding, masked
// (patch-only / register-only) CLS embeddings, and the final-layer skip
// contribution. Cached by image content hash.
TensorMap feature_variants(const Model& model, const Tensor& patches, std::size_t layer,
                           bool renorm) {
    TensorMap m;
    const ForwardTrace full = model.forward(patches);
    const TokenLayout layout = model.layout_for(patches.extent(0));
    m["full"] = full.cls_embedding();
    m["patch_only"] =
        model.forward_masked(patches, layer, TokenGroup::Patches, renorm).cls_embedding();
    if (model.config().num_registers > 0)
        m["register_only"] =
            model.forward_masked(patches, layer, TokenGroup::Registers, renorm).cls_embedding();
    m["skip_only"] = decompose_cls(full, layout, layer).skip_contrib;
    return m;
}

void cmd_cka(const RunConfig& rc, const Model& model) {
    const std::size_t layer = resolve_layer(rc, model.config());
    AnalysisReport rep = base_report(rc, model.config(), "cka");
    const FeatureCache cache;
    const std::string analysis_tag = "cka-features;layer=" + std::to_string(layer) +
                                     ";renorm=" + (rc.mask_renormalize ? "1" : "0");

    std::map<std::string, std::vector<Tensor>> variants;
    const auto images = load_dataset(rc, model.config());
    if (images.size() < 2) throw DatasetError("cka needs at least 2 images");
    for (const auto& img : images) {
        const std::string key = cache.key(img.content_hash, model.config().hash(), analysis_tag);
        TensorMap feats;
        if (auto hit = cache.get(key)) {
            feats = std::move(*hit);
        } else {
            feats = feature_variants(model, img.patches, layer, rc.mask_renormalize);
            cache.put(key, feats, model.config().hash(), analysis_tag);
        }
        for (auto& [name, t] : feats) variants[name].push_back(std::move(t));
        ImageRecord rec;
        rec.image_hash = img.content_hash;
        rep.records.push_back(std::move(rec));
    }

    const FeatureMatrix full{to_feature_matrix(variants.at("full")), "full"};
    for (const auto& [name, rows] : variants) {
        if (name == "full") continue;
        const FeatureMatrix fm{to_feature_matrix(rows), name};
        rep.results["cka_full_" + name] = linear_cka(full, fm).value;
    }
    emit_report(rep, parse_format(rc.format), rc.out);
}

void cmd_probe(const RunConfig& rc, const Model& model) {
    const std::size_t layer = resolve_layer(rc, model.config());
    AnalysisReport rep = base_report(rc, model.config(), "probe");
    rep.settings["top_k"] = std::to_string(rc.top_k);
    rep.settings["reps"] = std::to_string(rc.reps);

    const auto images = load_dataset(rc, model.config());
    std::map<std::string, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (!images[i].entry.label)
            throw DatasetError("probe needs labeled images (directory or labels.csv): " +
                               images[i].entry.path);
        by_class[*images[i].entry.label].push_back(i);
    }
    for (const auto& [label, idx] : by_class)
        if (idx.size() < 2)
            throw DatasetError("probe needs >= 2 images per class; class '" + label + "' has " +
                               std::to_string(idx.size()));

    // Features once per image, reused across repetitions.
    std::map<std::string, std::vector<Tensor>> feats;
    for (const auto& img : images) {
        TensorMap v = feature_variants(model, img.patches, layer, rc.mask_renormalize);
        for (auto& [name, t] : v) feats[name].push_back(std::move(t));
        ImageRecord rec;
        rec.image_hash = img.content_hash;
        rep.records.push_back(std::move(rec));
    }

    std::vector<int> class_ids;
    std::map<std::string, int> class_id;
    for (const auto& [label, idx] : by_class) class_id[label] = static_cast<int>(class_id.size());

    for (const auto& [variant, rows] : feats) {
        std::vector<double> accs;
        std::mt19937_64 rng(rc.seed);
        for (std::size_t rep_i = 0; rep_i < rc.reps; ++rep_i) {
            std::vector<Tensor> train_rows, test_rows;
            std::vector<int> train_labels, test_labels;
            for (const auto& [label, idx] : by_class) {
                std::vector<std::size_t> pick(idx);
                std::shuffle(pick.begin(), pick.end(), rng);
                train_rows.push_back(rows[pick[0]]);
                train_labels.push_back(class_id[label]);
                test_rows.push_back(rows[pick[1]]);
                test_labels.push_back(class_id[label]);
            }
            const FeatureMatrix train{to_feature_matrix(train_rows), variant + "-train"};
            const FeatureMatrix test{to_feature_matrix(test_rows), variant + "-test"};
            accs.push_back(one_shot_probe(train, train_labels, test, test_labels, rc.top_k));
        }
        double mean = 0.0;
        for (double a : accs) mean += a;
        mean /= static_cast<double>(accs.size());
        double var = 0.0;
        for (double a : accs) var += (a - mean) * (a - mean);
        var /= static_cast<double>(accs.size());
        rep.results["probe_" + variant + "_top" + std::to_string(rc.top_k) + "_mean"] = mean;
        rep.results["probe_" + variant + "_top" + std::to_string(rc.top_k) + "_std"] =
            std::sqrt(var);
    }
    emit_report(rep, parse_format(rc.format), rc.out);
}

void cmd_layers(const RunConfig& rc, const Model& model) {
    AnalysisReport rep = base_report(rc, model.config(), "layers");
    for (const auto& img : load_dataset(rc, model.config())) {
        const ForwardTrace trace = model.forward(img.patches);
        const TokenLayout layout = model.layout_for(img.patches.extent(0));
        ImageRecord rec;
        rec.image_hash = img.content_hash;
        const auto cls = trace.cls_per_layer();
        if (cls.size() >= 2) {
            std::vector<double> sims;
            for (const auto& s : layerwise_cls_similarity(cls))
                sims.push_back(s.value_or(std::nan("")));
            rec.series["cls_similarity"] = std::move(sims);
        } else {
            rec.series["cls_similarity"] = {1.0}; // single layer: trivially its own output
        }
        std::vector<double> patch_norms, skip_norms, nonpatch_norms;
        for (std::size_t li = 0; li < trace.layers.size(); ++li) {
            const ContributionNorms n = contribution_norms(decompose_cls(trace, layout, li));
            patch_norms.push_back(n.patch_norm);
            skip_norms.push_back(n.skip_norm);
            nonpatch_norms.push_back(n.nonpatch_norm);
        }
        rec.series["patch_norm"] = std::move(patch_norms);
        rec.series["skip_norm"] = std::move(skip_norms);
        rec.series["nonpatch_norm"] = std::move(nonpatch_norms);
        rep.records.push_back(std::move(rec));
    }
    emit_report(rep, parse_format(rc.format), rc.out);
}

void cmd_render(const RunConfig& rc, const Model& model) {
    const std::size_t layer = resolve_layer(rc, model.config());
    fs::create_directories(rc.out);
    for (const auto& img : load_dataset(rc, model.config())) {
        const ForwardTrace trace = model.forward(img.patches);
        const TokenLayout layout = model.layout_for(img.patches.extent(0));
        const LayerTrace& lt = trace.layers[layer];
        const std::size_t H = lt.attention.extent(0);
        const auto [p1, p2] = layout.grid;
        Tensor map({p1, p2});
        for (std::size_t i = 0; i < layout.patch_indices.size(); ++i) {
            double acc = 0.0;
            for (std::size_t h = 0; h < H; ++h)
                acc += lt.attention(h, layout.cls_index, layout.patch_indices[i]);
            map(i / p2, i % p2) = static_cast<float>(acc / static_cast<double>(H));
        }
        render_attention_map(map, (fs::path(rc.out) / (img.content_hash + ".svg")).string());
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"ViT attention attribution and CLS-output decomposition toolkit"};
    app.require_subcommand(1);

    RunConfig rc;
    std::size_t layer_flag = 0;
    bool layer_set = false;
    std::size_t limit_flag = 0;
    bool limit_set = false;

    auto add_shared = [&](CLI::App* sub) {
        sub->add_option("--model", rc.model_path, "safetensors checkpoint")->required();
        sub->add_option("--config", rc.config_path, "model config JSON")->required();
        sub->add_option("--data", rc.data_root, "image directory")->required();
        sub->add_option("--limit", limit_flag, "max images")->each([&](const std::string&) {
            limit_set = true;
        });
        sub->add_option("--seed", rc.seed, "shuffle / sampling seed (0 = no shuffle)");
        sub->add_option("--out", rc.out, "output path");
        sub->add_option("--format", rc.format, "json | csv")->check(CLI::IsMember({"json", "csv"}));
        sub->add_option("--layer", layer_flag, "layer index (default: final)")
            ->each([&](const std::string&) { layer_set = true; });
        sub->add_flag("--mask-renormalize", rc.mask_renormalize,
                      "renormalize masked CLS attention rows to sum 1");
        sub->add_flag("--with-checkpoints", rc.with_checkpoints,
                      "record that a published checkpoint is in use (qualitative trend runs)");
        sub->add_option("--resize", rc.resize, "shorter-side resize");
        sub->add_option("--crop", rc.crop, "center-crop size");
    };

    auto* partition = app.add_subcommand("partition", "CLS attention mass per token group");
    auto* decompose = app.add_subcommand("decompose", "CLS output contribution buckets");
    auto* cka = app.add_subcommand("cka", "CKA of masked feature variants vs full output");
    auto* probe = app.add_subcommand("probe", "one-shot nearest-prototype accuracy per variant");
    auto* layers = app.add_subcommand("layers", "layerwise CLS similarity and contribution norms");
    auto* norms = app.add_subcommand("norms", "final-layer contribution norms");
    auto* render = app.add_subcommand("render", "attention-map SVGs (one per image)");
    for (auto* sub : {partition, decompose, cka, probe, layers, norms, render}) add_shared(sub);
    probe->add_option("--top-k", rc.top_k, "top-k accuracy");
    probe->add_option("--reps", rc.reps, "sampling repetitions");

    CLI11_PARSE(app, argc, argv);
    if (layer_set) rc.layer = layer_flag;
    if (limit_set) rc.limit = limit_flag;

    try {
        const ModelConfig mc = ModelConfig::from_json_file(rc.config_path);
        const Model model = Model::load(rc.model_path, mc);
        if (partition->parsed()) cmd_partition(rc, model);
        else if (decompose->parsed()) cmd_decompose(rc, model);
        else if (cka->parsed()) cmd_cka(rc, model);
        else if (probe->parsed()) cmd_probe(rc, model);
        else if (layers->parsed()) cmd_layers(rc, model);
        else if (norms->parsed()) cmd_norms(rc, model);
        else if (render->parsed()) cmd_render(rc, model);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const LoadError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const DatasetError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const DecodeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const PreprocessError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 5;
    } catch (const UndefinedResultError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 6;
    }
    return 0;
}
