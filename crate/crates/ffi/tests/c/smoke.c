#include <stdio.h>
#include <string.h>

#include "tripleq.h"

#define CHECK(call)                                                     \
    do {                                                                \
        TqStatus s_ = (call);                                           \
        if (s_ != TQ_STATUS_OK) {                                       \
            const char *m_ = tq_last_error();                           \
            fprintf(stderr, "%s -> %d: %s\n", #call, (int)s_, m_ ? m_ : ""); \
            return 1;                                                   \
        }                                                               \
    } while (0)

int main(void) {
    TqSpec *spec = NULL;
    CHECK(tq_spec_chain(&spec));

    double objective = 0.0;
    bool feasible = false;
    CHECK(tq_baseline(spec, 0.0, &objective, &feasible));
    printf("baseline %.6f feasible %d\n", objective, (int)feasible);

    TqHyperParams hp;
    CHECK(tq_hyperparams_default(spec, 2000, TQ_MODE_PRACTICAL, &hp));
    TqLearner *learner = NULL;
    CHECK(tq_learner_new(spec, &hp, 7, &learner));
    double reward_sum = 0.0;
    for (int k = 0; k < 2000; k++) {
        double r = 0.0;
        CHECK(tq_learner_run_episode(learner, spec, &r, NULL));
        reward_sum += r;
    }
    size_t actions[1];
    CHECK(tq_learner_snapshot(learner, actions, 1));
    printf("mean reward %.4f action %zu\n", reward_sum / 2000.0, actions[0]);

    /* Theory mode refuses edited parameters. */
    TqHyperParams bad;
    CHECK(tq_hyperparams_default(spec, 100, TQ_MODE_THEORY, &bad));
    bad.eta = 2.0;
    TqLearner *none = NULL;
    if (tq_learner_new(spec, &bad, 1, &none) != TQ_STATUS_INVALID_ARGUMENT || tq_last_error() == NULL) {
        return 2;
    }

    char *json = NULL;
    CHECK(tq_spec_to_json(spec, &json));
    TqSpec *copy = NULL;
    CHECK(tq_spec_from_json(json, &copy));
    tq_string_free(json);

    tq_learner_free(learner);
    tq_spec_free(copy);
    tq_spec_free(spec);
    return 0;
}
