#include <stdio.h>
#include <stdlib.h>

#include "coattn.h"

int main(int argc, char **argv) {
    if (argc != 2) {
        return 64;
    }
    CoattnModel *model = NULL;
    if (coattn_model_load(argv[1], &model) != COATTN_STATUS_OK) {
        return 1;
    }
    const char *essay = "Kids get sick. Water is far away.";
    const char *article = "Water is far away.";
    int64_t score = -1;
    if (coattn_score(model, essay, article, &score) != COATTN_STATUS_OK) {
        return 2;
    }
    printf("score %lld\n", (long long)score);

    double weights[4];
    size_t len = 0;
    if (coattn_attention(model, essay, article, weights, 4, &len) != COATTN_STATUS_OK) {
        return 3;
    }
    for (size_t i = 0; i < len; i++) {
        printf("weight %zu %.5f\n", i + 1, weights[i]);
    }
    coattn_model_free(model);

    CoattnModel *missing = NULL;
    CoattnStatus status = coattn_model_load("/no/such/file.ckpt", &missing);
    char *message = coattn_last_error_message();
    printf("missing %d %s\n", (int)status, message ? "message" : "none");
    coattn_string_free(message);

    int64_t gold[3] = {1, 2, 3};
    int64_t pred[3] = {3, 2, 1};
    double kappa = 0.0;
    coattn_qwk(gold, pred, 3, 1, 3, &kappa);
    printf("qwk %.1f\n", kappa);
    return 0;
}
