#include "llmbroker/cli.hpp"

#include "llmbroker/broker.hpp"
#include "llmbroker/engine.hpp"
#include "llmbroker/errors.hpp"
#include "llmbroker/explain.hpp"
#include "llmbroker/planner.hpp"
#include "llmbroker/rag.hpp"
#include "llmbroker/tokenizer.hpp"
#include "llmbroker/vectorstore.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include <unistd.h>

namespace llmbroker {

namespace {

using json = nlohmann::json;

std::atomic<bool> g_stop_requested{false};

void handle_signal(int) {
    g_stop_requested.store(true);
}

// precedence: builtin default < environment < config file < explicit flag
struct settings {
    json config = json::object();

    static std::optional<std::string> env(const char * name) {
        if (const char * v = std::getenv(name)) {
            return std::string(v);
        }
        return std::nullopt;
    }

    template <typename T>
    T resolve(const CLI::Option * opt, const T & flag_value, const std::string & key,
              std::optional<T> env_value, T fallback) const {
        if (opt && opt->count() > 0) {
            return flag_value;
        }
        if (config.contains(key)) {
            return config[key].get<T>();
        }
        if (env_value) {
            return *env_value;
        }
        return fallback;
    }
};

std::optional<merge_table> load_merges(const std::string & path) {
    if (path.empty()) {
        return std::nullopt;
    }
    return merge_table::load(path);
}

std::unique_ptr<gen_backend> make_backend(const std::string & spec, const engine & eng) {
    if (spec == "hash") {
        return std::make_unique<hash_backend>(eng.vocab());
    }
    if (spec.rfind("scripted:", 0) == 0) {
        return std::make_unique<scripted_backend>(
            scripted_lm::load(spec.substr(9), eng.merges()), eng.vocab());
    }
    throw error(errc::bad_config, "unknown backend spec '" + spec + "' (use hash or scripted:PATH)");
}

std::string slurp_file(const std::string & path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw error(errc::io_error, "cannot open " + path);
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::vector<std::string> read_lines(const std::string & path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw error(errc::io_error, "cannot open " + path);
    }
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        lines.push_back(line);
    }
    return lines;
}

json kg_to_json(const knowledge_graph & kg) {
    json facts = json::array();
    for (const auto & t : kg.facts()) {
        facts.push_back(json::array({t.subject, t.predicate, t.object}));
    }
    return json{{"facts", facts}};
}

json citations_to_json(const std::vector<retrieved_chunk> & citations) {
    json arr = json::array();
    for (const auto & c : citations) {
        arr.push_back(json{{"text", c.text}, {"score", c.score}});
    }
    return arr;
}

struct sampling_flags {
    std::uint64_t seed = 0;
    double temperature = 0.0;
    int top_k = 0;
    double top_p = 1.0;
    int max_tokens = 256;
    std::vector<std::string> stop;

    void add_to(CLI::App * cmd) {
        cmd->add_option("--seed", seed, "RNG seed");
        cmd->add_option("--temperature", temperature, "0 = greedy")->check(CLI::NonNegativeNumber);
        cmd->add_option("--top-k", top_k, "top-k filter, 0 = off")->check(CLI::NonNegativeNumber);
        cmd->add_option("--top-p", top_p, "nucleus mass, 1 = off")
            ->check(CLI::Range(std::numeric_limits<double>::min(), 1.0));
        cmd->add_option("--max-tokens", max_tokens)->check(CLI::NonNegativeNumber);
        cmd->add_option("--stop", stop, "stop string (repeatable)");
    }

    sampling_params params() const {
        return {seed, temperature, top_k, top_p, max_tokens, stop};
    }
};

goal parse_goal_arg(const std::string & arg) {
    if (!arg.empty() && arg.front() == '@') {
        return goal::load(arg.substr(1));
    }
    if (std::filesystem::exists(arg) && arg.find(' ') == std::string::npos) {
        return goal::load(arg);
    }
    return goal::parse_shorthand(arg);
}

int serve_command(const std::string & backend, std::uint16_t port, const std::string & merges,
                  std::size_t max_sessions, std::ostream & out, std::ostream & err) {
    broker_config cfg;
    cfg.port = port;
    cfg.backend_spec = backend;
    if (!merges.empty()) {
        cfg.merges_path = merges;
    }
    cfg.max_sessions = max_sessions;

    broker srv(cfg);
    srv.start();
    err << "listening on port " << srv.port() << " (backend " << backend << ")\n";

    std::signal(SIGINT, handle_signal);
    std::signal(SIGTERM, handle_signal);
    while (!g_stop_requested.load()) {
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }
    srv.stop();
    out << json{{"port", srv.port()}, {"backend", backend}, {"status", "stopped"}}.dump() << "\n";
    return 0;
}

} // namespace

int run_cli(int argc, const char * const * argv, std::ostream & out, std::ostream & err) {
    CLI::App app{"edge LLM broker: streaming grammar-constrained generation, tokenization, "
                 "embeddings and RAG pipelines over a deterministic model backend"};
    app.require_subcommand(1);

    settings st;
    std::string config_path;
    app.add_option("--config", config_path, "JSON config file (flags override it)");

    // ---- serve ----
    auto * serve = app.add_subcommand("serve", "run the broker service");
    std::uint16_t port = 8350;
    std::string backend_spec = "hash";
    std::string merges_path;
    std::size_t max_sessions = 1;
    auto * serve_port = serve->add_option("--port", port, "TCP port (0 = ephemeral)");
    auto * serve_backend = serve->add_option("--backend", backend_spec, "hash | scripted:PATH");
    serve->add_option("--merges", merges_path, "merge table file");
    serve->add_option("--max-sessions", max_sessions, "concurrent generation sessions");

    // ---- tokenize/detokenize/embed ----
    auto * tok = app.add_subcommand("tokenize", "tokenize text");
    std::string tok_text;
    std::string tok_merges;
    tok->add_option("--text", tok_text, "input text")->required();
    tok->add_option("--merges", tok_merges, "merge table file");

    auto * detok = app.add_subcommand("detokenize", "decode a token sequence");
    std::vector<token_id> detok_tokens;
    std::string detok_merges;
    detok->add_option("--tokens", detok_tokens, "token ids")->required()->delimiter(',');
    detok->add_option("--merges", detok_merges, "merge table file");

    auto * emb = app.add_subcommand("embed", "embed text");
    std::string emb_text;
    std::string emb_merges;
    std::size_t emb_dim = 64;
    emb->add_option("--text", emb_text, "input text")->required();
    emb->add_option("--dim", emb_dim)->check(CLI::PositiveNumber);
    emb->add_option("--merges", emb_merges, "merge table file");

    // ---- generate ----
    auto * gen = app.add_subcommand("generate", "generate text from a prompt");
    std::string gen_prompt;
    std::string gen_grammar_path;
    std::string gen_backend_spec = "hash";
    std::string gen_merges;
    std::string gen_connect;
    bool stream_stdout = false;
    gen->add_option("--prompt", gen_prompt, "prompt text")->required();
    gen->add_option("--grammar", gen_grammar_path, "GBNF grammar file");
    auto * gen_backend_opt = gen->add_option("--backend", gen_backend_spec, "hash | scripted:PATH");
    gen->add_option("--merges", gen_merges, "merge table file");
    gen->add_option("--connect", gen_connect, "host:port of a running broker");
    gen->add_flag("--stream-stdout", stream_stdout, "stream feedback frames to stdout");
    sampling_flags gen_sampling;
    gen_sampling.add_to(gen);

    // ---- rag ----
    auto * rag_cmd = app.add_subcommand("rag", "retrieval-augmented generation");
    rag_cmd->require_subcommand(1);
    auto * rag_ingest = rag_cmd->add_subcommand("ingest", "chunk and embed documents");
    std::string rag_store;
    std::vector<std::string> rag_inputs;
    std::string rag_unit = "lines";
    std::size_t rag_size = 20;
    std::size_t rag_overlap = 5;
    std::size_t rag_dim = 64;
    std::string rag_merges;
    rag_ingest->add_option("--store", rag_store, "vector store path")->required();
    rag_ingest->add_option("--input", rag_inputs, "document file (repeatable)")->required();
    rag_ingest->add_option("--unit", rag_unit)->check(CLI::IsMember({"lines", "chars"}));
    rag_ingest->add_option("--size", rag_size)->check(CLI::PositiveNumber);
    rag_ingest->add_option("--overlap", rag_overlap);
    rag_ingest->add_option("--dim", rag_dim)->check(CLI::PositiveNumber);
    rag_ingest->add_option("--merges", rag_merges);

    auto * rag_ask = rag_cmd->add_subcommand("ask", "answer a query over the store");
    std::string rag_ask_store;
    std::string rag_question;
    std::size_t rag_k = 4;
    std::string rag_template = "templates/rag_answer.tmpl";
    std::string rag_backend_spec = "hash";
    std::string rag_ask_merges;
    rag_ask->add_option("--store", rag_ask_store, "vector store path")->required();
    rag_ask->add_option("--question", rag_question)->required();
    rag_ask->add_option("--k", rag_k)->check(CLI::PositiveNumber);
    rag_ask->add_option("--template", rag_template, "prompt template file");
    rag_ask->add_option("--backend", rag_backend_spec);
    rag_ask->add_option("--merges", rag_ask_merges);
    sampling_flags rag_sampling;
    rag_sampling.add_to(rag_ask);

    // ---- plan ----
    auto * plan_cmd = app.add_subcommand("plan", "knowledge-graph planning");
    plan_cmd->require_subcommand(1);
    auto * plan_run = plan_cmd->add_subcommand("run", "plan, execute and verify a goal");
    std::string plan_kg;
    std::string plan_actions;
    std::string plan_goal;
    std::string plan_backend_spec = "hash";
    std::string plan_tmpl_path = "templates/plan.tmpl";
    std::string check_tmpl_path = "templates/goal_check.tmpl";
    std::string plan_grammar_path = "grammars/plan.gbnf";
    std::string plan_merges;
    std::size_t plan_k = 4;
    plan_run->add_option("--kg", plan_kg, "knowledge graph JSON")->required();
    plan_run->add_option("--actions", plan_actions, "actions JSON")->required();
    plan_run->add_option("--goal", plan_goal, "\"subj pred obj[, ...]\" or a JSON file")->required();
    plan_run->add_option("--backend", plan_backend_spec);
    plan_run->add_option("--plan-template", plan_tmpl_path);
    plan_run->add_option("--check-template", check_tmpl_path);
    plan_run->add_option("--plan-grammar", plan_grammar_path);
    plan_run->add_option("--merges", plan_merges);
    plan_run->add_option("--k", plan_k)->check(CLI::PositiveNumber);
    sampling_flags plan_sampling;
    plan_sampling.add_to(plan_run);

    // ---- explain ----
    auto * explain_cmd = app.add_subcommand("explain", "log explainability");
    explain_cmd->require_subcommand(1);
    auto * exp_ingest = explain_cmd->add_subcommand("ingest", "ingest a log file");
    std::string exp_store;
    std::string exp_log;
    std::size_t exp_size = 20;
    std::size_t exp_overlap = 5;
    std::size_t exp_dim = 64;
    std::string exp_merges;
    exp_ingest->add_option("--store", exp_store, "vector store path")->required();
    exp_ingest->add_option("--log", exp_log, "log file")->required();
    exp_ingest->add_option("--size", exp_size)->check(CLI::PositiveNumber);
    exp_ingest->add_option("--overlap", exp_overlap);
    exp_ingest->add_option("--dim", exp_dim)->check(CLI::PositiveNumber);
    exp_ingest->add_option("--merges", exp_merges);

    auto * exp_ask = explain_cmd->add_subcommand("ask", "ask about past events");
    std::string exp_ask_store;
    std::string exp_question;
    std::size_t exp_k = 4;
    std::string exp_template = "templates/rag_answer.tmpl";
    std::string exp_backend_spec = "hash";
    std::string exp_ask_merges;
    exp_ask->add_option("--store", exp_ask_store, "vector store path")->required();
    exp_ask->add_option("--question", exp_question)->required();
    exp_ask->add_option("--k", exp_k)->check(CLI::PositiveNumber);
    exp_ask->add_option("--template", exp_template);
    exp_ask->add_option("--backend", exp_backend_spec);
    exp_ask->add_option("--merges", exp_ask_merges);
    sampling_flags exp_sampling;
    exp_sampling.add_to(exp_ask);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError & e) {
        if (e.get_exit_code() == 0) { // --help
            out << app.help();
            return 0;
        }
        err << e.what() << "\n";
        err << app.help();
        return 1;
    }

    try {
        if (!config_path.empty()) {
            st.config = json::parse(slurp_file(config_path));
            if (!st.config.is_object()) {
                throw error(errc::bad_config, "config file must hold a JSON object");
            }
        }

        if (serve->parsed()) {
            std::optional<std::uint16_t> env_port;
            if (auto v = settings::env("LLMBROKER_PORT")) {
                env_port = static_cast<std::uint16_t>(std::stoi(*v));
            }
            const auto eff_port =
                st.resolve<std::uint16_t>(serve_port, port, "port", env_port, 8350);
            const auto eff_backend = st.resolve<std::string>(
                serve_backend, backend_spec, "backend", settings::env("LLMBROKER_BACKEND"), "hash");
            return serve_command(eff_backend, eff_port, merges_path, max_sessions, out, err);
        }

        if (tok->parsed()) {
            const auto merges = load_merges(tok_merges);
            const token_sequence tokens = tokenize(tok_text, merges ? &*merges : nullptr);
            out << json{{"tokens", tokens}}.dump() << "\n";
            return 0;
        }

        if (detok->parsed()) {
            const auto merges = load_merges(detok_merges);
            const decode_result decoded = detokenize(detok_tokens, merges ? &*merges : nullptr);
            out << json{{"text", decoded.text}, {"lossy", decoded.lossy}}.dump() << "\n";
            return 0;
        }

        if (emb->parsed()) {
            const auto merges = load_merges(emb_merges);
            const embedding e = hash_embed(emb_dim).embed(tokenize(emb_text, merges ? &*merges : nullptr));
            out << json{{"embedding", e}, {"dim", e.size()}}.dump() << "\n";
            return 0;
        }

        if (gen->parsed()) {
            std::optional<std::string> grammar_src;
            if (!gen_grammar_path.empty()) {
                grammar_src = slurp_file(gen_grammar_path);
            }

            if (!gen_connect.empty()) {
                const auto colon = gen_connect.rfind(':');
                if (colon == std::string::npos) {
                    throw error(errc::bad_config, "--connect expects host:port");
                }
                wire_client client(gen_connect.substr(0, colon),
                                   static_cast<std::uint16_t>(std::stoi(gen_connect.substr(colon + 1))));
                json req{{"id", "cli-0"},
                         {"type", "generate"},
                         {"prompt", gen_prompt},
                         {"params",
                          {{"seed", gen_sampling.seed},
                           {"temperature", gen_sampling.temperature},
                           {"top_k", gen_sampling.top_k},
                           {"top_p", gen_sampling.top_p},
                           {"max_tokens", gen_sampling.max_tokens},
                           {"stop", gen_sampling.stop}}}};
                if (grammar_src) {
                    req["grammar"] = *grammar_src;
                }
                client.send(req);
                for (;;) {
                    auto frame = client.recv();
                    if (!frame) {
                        throw error(errc::io_error, "connection closed before the result frame");
                    }
                    const std::string type = frame->value("type", "");
                    if (type == "feedback") {
                        (stream_stdout ? out : err) << frame->dump() << "\n";
                    } else if (type == "result") {
                        out << json{{"text", (*frame)["text"]},
                                    {"status", (*frame)["status"]},
                                    {"finish_reason", (*frame)["finish_reason"]}}
                                   .dump()
                            << "\n";
                        return frame->value("status", "") == "succeeded" ? 0 : 2;
                    } else if (type == "error") {
                        throw error(errc::bad_request, frame->value("message", "remote error"));
                    }
                }
            }

            auto merges = load_merges(gen_merges);
            engine eng(std::move(merges));
            auto backend = make_backend(gen_backend_spec, eng);

            generation_goal goal;
            goal.session_id = "cli-0";
            goal.prompt = gen_prompt;
            goal.params = gen_sampling.params();
            goal.grammar_source = grammar_src;

            const generation_result result =
                eng.generate(goal, *backend, [&](const feedback_chunk & chunk) {
                    (stream_stdout ? out : err)
                        << json{{"index", chunk.index}, {"token_id", chunk.token}, {"text", chunk.text}}
                               .dump()
                        << "\n";
                });
            out << json{{"text", result.text},
                        {"status", to_string(result.status)},
                        {"finish_reason", to_string(result.reason)},
                        {"token_count", result.token_count}}
                       .dump()
                << "\n";
            return result.status == gen_status::succeeded ? 0 : 2;
        }

        if (rag_ingest->parsed()) {
            const auto merges = load_merges(rag_merges);
            vector_store store = vector_store::open(rag_store, rag_dim);
            const chunking_policy policy(rag_unit == "chars" ? chunking_policy::unit_kind::chars
                                                             : chunking_policy::unit_kind::lines,
                                         rag_size, rag_overlap);
            std::vector<document> docs;
            for (const auto & path : rag_inputs) {
                docs.push_back({path, slurp_file(path)});
            }
            const std::size_t n =
                ingest(store, docs, policy, make_hash_embedder(store.dim(), merges ? &*merges : nullptr));
            out << json{{"inserted", n}, {"store", rag_store}}.dump() << "\n";
            return 0;
        }

        if (rag_ask->parsed()) {
            vector_store store = vector_store::open(rag_ask_store);
            engine eng(load_merges(rag_ask_merges));
            auto backend = make_backend(rag_backend_spec, eng);
            explain_config cfg{prompt_template::load(rag_template), rag_k, rag_sampling.params()};
            const answer a = ask(store, rag_question, eng, *backend, cfg);
            out << json{{"text", a.text}, {"citations", citations_to_json(a.citations)}}.dump() << "\n";
            return 0;
        }

        if (plan_run->parsed()) {
            const auto merges = load_merges(plan_merges);
            engine eng(merges);
            auto backend = make_backend(plan_backend_spec, eng);

            const knowledge_graph kg = knowledge_graph::load(plan_kg);
            const action_registry actions = action_registry::load(plan_actions);
            const goal g = parse_goal_arg(plan_goal);

            const auto store_path = std::filesystem::temp_directory_path() /
                                    ("llmbroker-plan-" + std::to_string(::getpid()) + ".vecdb");
            vector_store store = vector_store::open(store_path);
            ingest_kg(store, kg, make_hash_embedder(store.dim(), eng.merges()));

            planner_config cfg{prompt_template::load(plan_tmpl_path),
                               prompt_template::load(check_tmpl_path),
                               slurp_file(plan_grammar_path), plan_k, plan_sampling.params()};

            json doc;
            int code = 0;
            try {
                const plan p = make_plan(g, store, actions, eng, *backend, cfg);
                json steps = json::array();
                for (const auto & s : p.steps) {
                    steps.push_back(json{{"action", s.action}, {"args", s.args}});
                }
                const knowledge_graph final_kg = execute(p, kg, actions);
                doc = json{{"plan", steps},
                           {"final_kg", kg_to_json(final_kg)},
                           {"goal_achieved", check_goal(final_kg, g)},
                           {"llm_goal_check", llm_check_goal(final_kg, g, eng, *backend, cfg)}};
            } catch (const precondition_failed_error & e) {
                doc = json{{"error",
                            {{"code", errc_name(e.code())},
                             {"message", e.what()},
                             {"step", e.step()},
                             {"missing", json::array({e.missing().subject, e.missing().predicate,
                                                      e.missing().object})},
                             {"kg_reached", kg_to_json(e.reached())}}}};
                code = 2;
            }
            std::filesystem::remove(store_path);
            out << doc.dump() << "\n";
            return code;
        }

        if (exp_ingest->parsed()) {
            const auto merges = load_merges(exp_merges);
            vector_store store = vector_store::open(exp_store, exp_dim);
            const chunking_policy policy(chunking_policy::unit_kind::lines, exp_size, exp_overlap);
            const std::vector<std::string> lines = read_lines(exp_log);
            const std::size_t n = ingest_logs(store, lines, policy,
                                              make_hash_embedder(store.dim(), merges ? &*merges : nullptr));
            out << json{{"inserted", n}, {"store", exp_store}}.dump() << "\n";
            return 0;
        }

        if (exp_ask->parsed()) {
            const auto merges = load_merges(exp_ask_merges);
            vector_store store = vector_store::open(exp_ask_store);
            engine eng(merges);
            auto backend = make_backend(exp_backend_spec, eng);
            explain_config cfg{prompt_template::load(exp_template), exp_k, exp_sampling.params()};
            const answer a = ask(store, exp_question, eng, *backend, cfg);
            out << json{{"text", a.text}, {"citations", citations_to_json(a.citations)}}.dump() << "\n";
            return 0;
        }

        err << app.help();
        return 1;
    } catch (const error & e) {
        out << json{{"error", {{"code", errc_name(e.code())}, {"message", e.what()}}}}.dump() << "\n";
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception & e) {
        out << json{{"error", {{"code", "internal"}, {"message", e.what()}}}}.dump() << "\n";
        err << "error: " << e.what() << "\n";
        return 2;
    }
}

} // namespace llmbroker
