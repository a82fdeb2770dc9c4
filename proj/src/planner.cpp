#include "llmbroker/planner.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace llmbroker {

namespace {

bool valid_term(std::string_view term) {
    if (term.empty()) {
        return false;
    }
    return std::none_of(term.begin(), term.end(),
                        [](unsigned char c) { return std::isspace(c); });
}

triple triple_from_json(const nlohmann::json & j) {
    if (!j.is_array() || j.size() != 3) {
        throw error(errc::bad_config, "triple must be a 3-element array");
    }
    return make_triple(j[0].get<std::string>(), j[1].get<std::string>(), j[2].get<std::string>());
}

} // namespace

std::string triple::sentence() const {
    return subject + " " + predicate + " " + object + ".";
}

triple make_triple(std::string subject, std::string predicate, std::string object) {
    for (const auto * term : {&subject, &predicate, &object}) {
        if (!valid_term(*term)) {
            throw error(errc::bad_config, "triple terms must be non-empty and whitespace-free");
        }
    }
    return triple{std::move(subject), std::move(predicate), std::move(object)};
}

knowledge_graph::knowledge_graph(std::vector<triple> facts) {
    for (auto & f : facts) {
        insert(std::move(f));
    }
}

void knowledge_graph::insert(triple fact) {
    for (const auto * term : {&fact.subject, &fact.predicate, &fact.object}) {
        if (!valid_term(*term)) {
            throw error(errc::bad_config, "triple terms must be non-empty and whitespace-free");
        }
    }
    facts_.insert(std::move(fact));
}

void knowledge_graph::erase(const triple & fact) {
    facts_.erase(fact);
}

bool knowledge_graph::contains(const triple & fact) const {
    return facts_.count(fact) > 0;
}

knowledge_graph knowledge_graph::load(const std::filesystem::path & path) {
    std::ifstream in(path);
    if (!in) {
        throw error(errc::io_error, "cannot open knowledge graph: " + path.string());
    }
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception & e) {
        throw error(errc::bad_config, "knowledge graph " + path.string() + ": " + e.what());
    }
    knowledge_graph kg;
    for (const auto & f : doc.at("facts")) {
        kg.insert(triple_from_json(f));
    }
    return kg;
}

action_registry::action_registry(std::vector<action_schema> actions)
    : actions_(std::move(actions)) {
    std::unordered_map<std::string, bool> seen;
    for (const auto & a : actions_) {
        if (a.name.empty() || seen.count(a.name)) {
            throw error(errc::bad_config, "duplicate or empty action name '" + a.name + "'");
        }
        seen[a.name] = true;
        auto is_param = [&](const std::string & term) {
            return std::find(a.params.begin(), a.params.end(), term) != a.params.end();
        };
        auto check_vars = [&](const std::vector<triple> & triples, const char * what) {
            for (const auto & t : triples) {
                for (const std::string * term : {&t.subject, &t.predicate, &t.object}) {
                    if (!term->empty() && term->front() == '?' && !is_param(*term)) {
                        throw error(errc::bad_config, "action '" + a.name + "' uses unbound variable '" +
                                                          *term + "' in " + what);
                    }
                }
            }
        };
        check_vars(a.preconditions, "preconditions");
        check_vars(a.add_effects, "add effects");
        check_vars(a.del_effects, "del effects");
    }
}

action_registry action_registry::load(const std::filesystem::path & path) {
    std::ifstream in(path);
    if (!in) {
        throw error(errc::io_error, "cannot open actions file: " + path.string());
    }
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception & e) {
        throw error(errc::bad_config, "actions file " + path.string() + ": " + e.what());
    }
    if (!doc.is_array()) {
        throw error(errc::bad_config, "actions file must be a JSON array");
    }
    std::vector<action_schema> actions;
    for (const auto & item : doc) {
        action_schema a;
        a.name = item.at("name").get<std::string>();
        if (item.contains("params")) {
            a.params = item["params"].get<std::vector<std::string>>();
        }
        auto read_triples = [&](const char * key) {
            std::vector<triple> out;
            if (item.contains(key)) {
                for (const auto & t : item[key]) {
                    out.push_back(triple_from_json(t));
                }
            }
            return out;
        };
        a.preconditions = read_triples("preconditions");
        a.add_effects = read_triples("add");
        a.del_effects = read_triples("del");
        actions.push_back(std::move(a));
    }
    return action_registry(std::move(actions));
}

const action_schema & action_registry::find(const std::string & name) const {
    for (const auto & a : actions_) {
        if (a.name == name) {
            return a;
        }
    }
    throw error(errc::unknown_action, "action '" + name + "' is not in the registry");
}

std::string goal::text() const {
    std::string out;
    for (std::size_t i = 0; i < required.size(); ++i) {
        if (i > 0) {
            out += " ";
        }
        out += required[i].sentence();
    }
    return out;
}

goal goal::load(const std::filesystem::path & path) {
    std::ifstream in(path);
    if (!in) {
        throw error(errc::io_error, "cannot open goal file: " + path.string());
    }
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception & e) {
        throw error(errc::bad_config, "goal file " + path.string() + ": " + e.what());
    }
    goal g;
    for (const auto & t : doc.at("required")) {
        g.required.push_back(triple_from_json(t));
    }
    if (g.required.empty()) {
        throw error(errc::bad_config, "goal requires at least one triple");
    }
    return g;
}

goal goal::parse_shorthand(std::string_view text) {
    goal g;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t comma = text.find(',', start);
        std::string_view part =
            text.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
        std::istringstream fields{std::string(part)};
        std::string s, p, o, extra;
        if (!(fields >> s >> p >> o) || (fields >> extra)) {
            throw error(errc::bad_config, "goal shorthand must be 'subj pred obj[, ...]'");
        }
        g.required.push_back(make_triple(s, p, o));
        if (comma == std::string_view::npos) {
            break;
        }
        start = comma + 1;
    }
    if (g.required.empty()) {
        throw error(errc::bad_config, "goal requires at least one triple");
    }
    return g;
}

precondition_failed_error::precondition_failed_error(std::size_t step, triple missing,
                                                     knowledge_graph reached)
    : error(errc::precondition_failed,
            "step " + std::to_string(step) + ": missing precondition " + missing.sentence()),
      step_(step), missing_(std::move(missing)), reached_(std::move(reached)) {}

std::vector<std::string> kg_to_text(const knowledge_graph & kg) {
    std::vector<std::string> lines;
    lines.reserve(kg.size());
    for (const auto & fact : kg.facts()) {
        lines.push_back(fact.sentence());
    }
    std::sort(lines.begin(), lines.end());
    return lines;
}

std::size_t ingest_kg(vector_store & store, const knowledge_graph & kg, const embed_fn & embed) {
    std::size_t count = 0;
    for (const std::string & line : kg_to_text(kg)) {
        store.insert(line, embed(line), {{"source", "kg"}});
        ++count;
    }
    return count;
}

namespace {

std::string describe_action(const action_schema & a) {
    auto join_triples = [](const std::vector<triple> & ts) {
        std::string out;
        for (std::size_t i = 0; i < ts.size(); ++i) {
            if (i > 0) {
                out += ", ";
            }
            out += ts[i].subject + " " + ts[i].predicate + " " + ts[i].object;
        }
        return out.empty() ? std::string("none") : out;
    };
    std::string head = a.name + "(";
    for (std::size_t i = 0; i < a.params.size(); ++i) {
        if (i > 0) {
            head += ", ";
        }
        head += a.params[i];
    }
    head += ")";
    return head + " requires: " + join_triples(a.preconditions) +
           "; adds: " + join_triples(a.add_effects) + "; deletes: " + join_triples(a.del_effects);
}

plan parse_plan_json(const std::string & text, const action_registry & actions) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception & e) {
        throw error(errc::planning_failed, "plan output is not parseable JSON: " + std::string(e.what()));
    }
    if (!doc.is_array()) {
        throw error(errc::planning_failed, "plan output is not a JSON array");
    }
    plan p;
    for (const auto & item : doc) {
        plan_step step;
        step.action = item.at("action").get<std::string>();
        step.args = item.at("args").get<std::vector<std::string>>();
        const action_schema & schema = actions.find(step.action); // unknown_action
        if (schema.params.size() != step.args.size()) {
            throw error(errc::bad_plan_step,
                        "step '" + step.action + "' expects " + std::to_string(schema.params.size()) +
                            " args, got " + std::to_string(step.args.size()));
        }
        p.steps.push_back(std::move(step));
    }
    return p;
}

std::string run_generation(engine & eng, gen_backend & backend, const std::string & prompt,
                           const sampling_params & params, const std::string & grammar_src,
                           const std::string & session_tag) {
    static std::atomic<std::uint64_t> counter{0};
    generation_goal goal;
    goal.session_id = session_tag + "#" + std::to_string(counter.fetch_add(1));
    goal.prompt = prompt;
    goal.params = params;
    goal.grammar_source = grammar_src;

    const generation_result result = eng.generate(goal, backend);
    if (result.status == gen_status::failed) {
        if (result.error_code == errc::script_violates_grammar) {
            throw error(errc::script_violates_grammar, result.error_message);
        }
        throw error(errc::planning_failed, result.error_message);
    }
    if (result.status == gen_status::canceled) {
        throw error(errc::planning_failed, "generation was canceled");
    }
    if (result.reason == finish_reason::max_tokens) {
        throw error(errc::planning_failed, "generation hit max_tokens before completing");
    }
    return result.text;
}

} // namespace

plan make_plan(const goal & g, const vector_store & store, const action_registry & actions,
               engine & eng, gen_backend & backend, const planner_config & cfg) {
    if (actions.empty()) {
        throw error(errc::bad_config, "action registry is empty");
    }
    const embed_fn embed = make_hash_embedder(store.dim(), eng.merges());
    std::vector<std::string> contexts;
    for (const auto & hit : retrieve(store, g.text(), cfg.k, embed)) {
        contexts.push_back(hit.text);
    }

    std::string query = "Actions:\n";
    for (const auto & a : actions.actions()) {
        query += "- " + describe_action(a) + "\n";
    }
    query += "Goal: " + g.text();

    const std::string prompt = cfg.plan_tmpl.render(contexts, query);
    const std::string text = run_generation(eng, backend, prompt, cfg.params, cfg.plan_grammar, "plan");
    return parse_plan_json(text, actions);
}

knowledge_graph execute(const plan & p, const knowledge_graph & kg, const action_registry & actions) {
    knowledge_graph current = kg;
    for (std::size_t i = 0; i < p.steps.size(); ++i) {
        const plan_step & step = p.steps[i];
        const action_schema & schema = actions.find(step.action);
        if (schema.params.size() != step.args.size()) {
            throw error(errc::bad_plan_step, "step " + std::to_string(i) + " arity mismatch for '" +
                                                 step.action + "'");
        }
        std::unordered_map<std::string, std::string> binding;
        for (std::size_t j = 0; j < schema.params.size(); ++j) {
            binding[schema.params[j]] = step.args[j];
        }
        auto ground = [&](const triple & pattern) {
            auto term = [&](const std::string & t) {
                if (!t.empty() && t.front() == '?') {
                    return binding.at(t);
                }
                return t;
            };
            return make_triple(term(pattern.subject), term(pattern.predicate), term(pattern.object));
        };

        for (const triple & pre : schema.preconditions) {
            const triple needed = ground(pre);
            if (!current.contains(needed)) {
                throw precondition_failed_error(i, needed, current);
            }
        }
        // del before add keeps self-overwriting effects well-defined
        for (const triple & del : schema.del_effects) {
            current.erase(ground(del));
        }
        for (const triple & add : schema.add_effects) {
            current.insert(ground(add));
        }
    }
    return current;
}

bool check_goal(const knowledge_graph & kg, const goal & g) {
    return std::all_of(g.required.begin(), g.required.end(),
                       [&](const triple & t) { return kg.contains(t); });
}

bool llm_check_goal(const knowledge_graph & kg, const goal & g, engine & eng,
                    gen_backend & backend, const planner_config & cfg) {
    const std::vector<std::string> contexts = kg_to_text(kg);
    const std::string prompt = cfg.check_tmpl.render(contexts, g.text());
    std::string text;
    try {
        text = run_generation(eng, backend, prompt, cfg.params, "root ::= \"yes\" | \"no\"", "goal-check");
    } catch (const error & e) {
        if (e.code() == errc::script_violates_grammar) {
            throw;
        }
        throw error(errc::check_failed, e.what());
    }
    return text == "yes";
}

} // namespace llmbroker
