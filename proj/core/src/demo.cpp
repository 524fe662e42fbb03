#include "sira/demo.hpp"

namespace sira {

DemoArtifacts build_demo(const DemoRecipe& recipe) {
  DemoArtifacts a;
  a.dataset = gen_dataset(recipe.scene_spec(), recipe.dataset_n);
  a.model = init_model(recipe.model_config, recipe.model_seed);
  a.loss_curve = train_toy(a.model, a.dataset.train_text, recipe.pretrain_steps,
                           recipe.learning_rate, recipe.train_seed)
                     .loss_curve;
  // Grounded phase with text replay: the image-free circuit from pretraining
  // must survive, or the counterfactual branch has no prior to fall back on.
  std::vector<Example> grounded_mix = a.dataset.train;
  grounded_mix.insert(grounded_mix.end(), a.dataset.train_text.begin(), a.dataset.train_text.end());
  const auto grounded = train_toy(a.model, grounded_mix, recipe.train_steps, recipe.learning_rate,
                                  recipe.train_seed + 1);
  a.loss_curve.insert(a.loss_curve.end(), grounded.loss_curve.begin(), grounded.loss_curve.end());
  return a;
}

}  // namespace sira
