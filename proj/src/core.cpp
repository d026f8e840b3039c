#include "flexsdr/core.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <sstream>
#include <unordered_set>

namespace flexsdr::core {

using nlohmann::json;

Label label_from_int(int v) {
    if (v == 0) return Label::mismatch;
    if (v == 1) return Label::match;
    throw DatasetError("label must be 0 or 1, got " + std::to_string(v));
}

std::string split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::test: return "test";
        case Split::demo: return "demo";
    }
    throw std::logic_error("unreachable split");
}

Split split_from_name(const std::string& name) {
    if (name == "train") return Split::train;
    if (name == "test") return Split::test;
    if (name == "demo") return Split::demo;
    throw DatasetError("split must be train/test/demo, got \"" + name + "\"");
}

bool Demonstration::operator==(const Demonstration& o) const {
    bool emb_equal =
        embedding.has_value() == o.embedding.has_value() &&
        (!embedding.has_value() || (embedding->size() == o.embedding->size() &&
                                    *embedding == *o.embedding));
    return id == o.id && knowledge_id == o.knowledge_id &&
           question_text == o.question_text && label == o.label &&
           reason_text == o.reason_text && hints == o.hints && emb_equal;
}

namespace {

[[noreturn]] void line_error(std::size_t line_no, const std::string& what) {
    throw DatasetError("line " + std::to_string(line_no) + ": " + what);
}

std::string require_string(const json& rec, const char* key, std::size_t line_no) {
    auto it = rec.find(key);
    if (it == rec.end() || !it->is_string())
        line_error(line_no, std::string("missing or non-string field \"") + key + "\"");
    return it->get<std::string>();
}

std::set<int> optional_int_set(const json& rec, const char* key, std::size_t line_no) {
    std::set<int> out;
    auto it = rec.find(key);
    if (it == rec.end()) return out;
    if (!it->is_array())
        line_error(line_no, std::string("field \"") + key + "\" must be an array of integers");
    for (const auto& v : *it) {
        if (!v.is_number_integer())
            line_error(line_no, std::string("field \"") + key + "\" must contain only integers");
        out.insert(v.get<int>());
    }
    return out;
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DatasetError("cannot open dataset file: " + path.string());

    Dataset ds;
    std::unordered_set<std::string> instance_ids;
    std::unordered_set<std::string> demo_ids;

    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;

        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            line_error(line_no, std::string("invalid JSON: ") + e.what());
        }
        if (!rec.is_object()) line_error(line_no, "record is not a JSON object");

        const std::string id = require_string(rec, "id", line_no);
        const std::string knowledge_id = require_string(rec, "knowledge_id", line_no);
        const std::string question = require_string(rec, "question_text", line_no);

        auto label_it = rec.find("label");
        if (label_it == rec.end() || !label_it->is_number_integer())
            line_error(line_no, "missing or non-integer field \"label\"");
        Label label;
        try {
            label = label_from_int(label_it->get<int>());
        } catch (const DatasetError& e) {
            line_error(line_no, std::string("field \"label\": ") + e.what());
        }

        Split split;
        try {
            split = split_from_name(require_string(rec, "split", line_no));
        } catch (const DatasetError& e) {
            line_error(line_no, std::string("field \"split\": ") + e.what());
        }

        if (split == Split::demo) {
            if (!demo_ids.insert(id).second)
                line_error(line_no, "duplicate demonstration id \"" + id + "\"");
            Demonstration d;
            d.id = id;
            d.knowledge_id = knowledge_id;
            d.question_text = question;
            d.label = label;
            if (auto it = rec.find("reason"); it != rec.end() && it->is_string())
                d.reason_text = it->get<std::string>();
            d.hints = optional_int_set(rec, "hints", line_no);
            auto& bank = ds.banks[knowledge_id];
            bank.knowledge_id = knowledge_id;
            bank.demonstrations.push_back(std::move(d));
            continue;
        }

        if (!instance_ids.insert(id).second)
            line_error(line_no, "duplicate instance id \"" + id + "\"");

        TaggingInstance inst;
        inst.id = id;
        inst.knowledge_id = knowledge_id;
        inst.knowledge_text = require_string(rec, "knowledge_text", line_no);
        inst.question_text = question;
        inst.label = label;
        inst.split = split;
        if (inst.knowledge_text.empty())
            line_error(line_no, "field \"knowledge_text\" must be non-empty");
        if (inst.question_text.empty())
            line_error(line_no, "field \"question_text\" must be non-empty");

        const bool has_zss = rec.contains("zero_shot_solvable");
        const bool has_req = rec.contains("required_hints");
        if (has_zss || has_req) {
            SimMeta meta;
            if (has_zss) {
                if (!rec["zero_shot_solvable"].is_boolean())
                    line_error(line_no, "field \"zero_shot_solvable\" must be boolean");
                meta.zero_shot_solvable = rec["zero_shot_solvable"].get<bool>();
            }
            meta.required_hints = optional_int_set(rec, "required_hints", line_no);
            inst.sim_meta = std::move(meta);
        }
        ds.instances.push_back(std::move(inst));
    }
    return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DatasetError("cannot open for writing: " + path.string());

    for (const auto& inst : ds.instances) {
        json rec{
            {"id", inst.id},
            {"knowledge_id", inst.knowledge_id},
            {"knowledge_text", inst.knowledge_text},
            {"question_text", inst.question_text},
            {"label", to_int(inst.label)},
            {"split", split_name(inst.split)},
        };
        if (inst.sim_meta) {
            rec["zero_shot_solvable"] = inst.sim_meta->zero_shot_solvable;
            rec["required_hints"] = inst.sim_meta->required_hints;
        }
        out << rec.dump() << '\n';
    }
    for (const auto& [kid, bank] : ds.banks) {
        for (const auto& d : bank.demonstrations) {
            json rec{
                {"id", d.id},
                {"knowledge_id", kid},
                {"question_text", d.question_text},
                {"label", to_int(d.label)},
                {"split", "demo"},
                {"reason", d.reason_text},
            };
            if (!d.hints.empty()) rec["hints"] = d.hints;
            out << rec.dump() << '\n';
        }
    }
}

std::vector<std::string> validate_dataset(const Dataset& ds) {
    std::vector<std::string> diags;
    std::unordered_set<std::string> seen;

    for (const auto& inst : ds.instances) {
        if (!seen.insert(inst.id).second)
            diags.push_back("duplicate instance id: " + inst.id);
        if (inst.knowledge_text.empty())
            diags.push_back("empty knowledge_text: " + inst.id);
        if (inst.question_text.empty())
            diags.push_back("empty question_text: " + inst.id);
        if (!ds.banks.contains(inst.knowledge_id))
            diags.push_back("no demonstration bank for knowledge_id \"" +
                            inst.knowledge_id + "\" (instance " + inst.id + ")");
    }

    for (const auto& [kid, bank] : ds.banks) {
        if (bank.demonstrations.empty())
            diags.push_back("empty bank: " + kid);
        if (bank.knowledge_id != kid)
            diags.push_back("bank key/knowledge_id mismatch: " + kid);
        std::unordered_set<std::string> demo_seen;
        for (const auto& d : bank.demonstrations) {
            if (!demo_seen.insert(d.id).second)
                diags.push_back("duplicate demonstration id: " + d.id);
            if (d.knowledge_id != kid)
                diags.push_back("demonstration " + d.id + " has knowledge_id \"" +
                                d.knowledge_id + "\" but lives in bank \"" + kid + "\"");
        }
    }
    return diags;
}

}  // namespace flexsdr::core
