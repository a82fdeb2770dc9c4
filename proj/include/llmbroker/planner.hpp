#pragma once

#include "llmbroker/engine.hpp"
#include "llmbroker/errors.hpp"
#include "llmbroker/rag.hpp"
#include "llmbroker/vectorstore.hpp"

#include <filesystem>
#include <set>
#include <string>
#include <vector>

namespace llmbroker {

// subject/predicate/object; terms are non-empty and whitespace-free
struct triple {
    std::string subject;
    std::string predicate;
    std::string object;

    friend auto operator<=>(const triple &, const triple &) = default;

    std::string sentence() const; // "subject predicate object."
};

triple make_triple(std::string subject, std::string predicate, std::string object);

class knowledge_graph {
public:
    knowledge_graph() = default;
    explicit knowledge_graph(std::vector<triple> facts);

    void insert(triple fact);
    void erase(const triple & fact);
    bool contains(const triple & fact) const;

    std::size_t size() const { return facts_.size(); }
    const std::set<triple> & facts() const { return facts_; }

    static knowledge_graph load(const std::filesystem::path & path);

    friend bool operator==(const knowledge_graph &, const knowledge_graph &) = default;

private:
    std::set<triple> facts_;
};

// STRIPS-style operator: bind params positionally, require preconditions,
// apply deletes then adds
struct action_schema {
    std::string name;
    std::vector<std::string> params;       // variable names, "?"-prefixed
    std::vector<triple> preconditions;     // patterns over params and constants
    std::vector<triple> add_effects;
    std::vector<triple> del_effects;
};

class action_registry {
public:
    explicit action_registry(std::vector<action_schema> actions);

    static action_registry load(const std::filesystem::path & path);

    const action_schema & find(const std::string & name) const; // throws unknown_action
    const std::vector<action_schema> & actions() const { return actions_; }
    bool empty() const { return actions_.empty(); }

private:
    std::vector<action_schema> actions_;
};

struct plan_step {
    std::string action;
    std::vector<std::string> args;

    friend bool operator==(const plan_step &, const plan_step &) = default;
};

struct plan {
    std::vector<plan_step> steps;

    friend bool operator==(const plan &, const plan &) = default;
};

struct goal {
    std::vector<triple> required; // non-empty

    std::string text() const; // sentences joined with spaces

    static goal load(const std::filesystem::path & path);
    static goal parse_shorthand(std::string_view text); // "subj pred obj[, ...]"
};

class precondition_failed_error : public error {
public:
    precondition_failed_error(std::size_t step, triple missing, knowledge_graph reached);

    std::size_t step() const { return step_; }
    const triple & missing() const { return missing_; }
    const knowledge_graph & reached() const { return reached_; }

private:
    std::size_t step_;
    triple missing_;
    knowledge_graph reached_;
};

// deterministic text form of the graph: one sorted "s p o." line per fact
std::vector<std::string> kg_to_text(const knowledge_graph & kg);

// each fact sentence becomes one stored chunk with meta {source:"kg"}
std::size_t ingest_kg(vector_store & store, const knowledge_graph & kg, const embed_fn & embed);

struct planner_config {
    prompt_template plan_tmpl;
    prompt_template check_tmpl;
    std::string plan_grammar; // GBNF source constraining plan output
    std::size_t k = 4;
    sampling_params params;   // greedy by default
};

// retrieval-refined prompt -> grammar-constrained generation -> parsed plan
plan make_plan(const goal & g, const vector_store & store, const action_registry & actions,
               engine & eng, gen_backend & backend, const planner_config & cfg);

// applies the plan; prior steps persist on failure, which reports the failing
// step index, the missing precondition and the graph state reached
knowledge_graph execute(const plan & p, const knowledge_graph & kg, const action_registry & actions);

// symbolic check: every required triple present
bool check_goal(const knowledge_graph & kg, const goal & g);

// generation constrained to root ::= "yes" | "no"
bool llm_check_goal(const knowledge_graph & kg, const goal & g, engine & eng,
                    gen_backend & backend, const planner_config & cfg);

} // namespace llmbroker
