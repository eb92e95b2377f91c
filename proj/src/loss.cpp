#include "sqa/loss.hpp"

#include <set>

#include <json.hpp>

namespace sqa {

LossConfig LossConfig::from_json_text(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(std::string("loss config: ") + e.what());
    }
    const std::set<std::string> known{"gamma_ce", "gamma_dice", "lambda_aux", "dice_eps"};
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key()))
            throw FormatError("loss config: unknown key '" + it.key() + "'");
    LossConfig cfg;
    if (j.contains("gamma_ce")) cfg.gamma_ce = j.at("gamma_ce").get<double>();
    if (j.contains("gamma_dice")) cfg.gamma_dice = j.at("gamma_dice").get<double>();
    if (j.contains("lambda_aux")) cfg.lambda_aux = j.at("lambda_aux").get<double>();
    if (j.contains("dice_eps")) cfg.dice_eps = j.at("dice_eps").get<double>();
    cfg.validate();
    return cfg;
}

}  // namespace sqa
